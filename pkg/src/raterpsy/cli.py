"""
Command-line front end.

Every run is described by a :class:`RunConfig`, assembled from built-in
defaults, an optional ``--config`` file (YAML or JSON), environment
overrides (``RATERPSY_SEED``, ``RATERPSY_OUTPUT_DIR``, ``RATERPSY_THREADS``)
and explicit flags, in increasing order of precedence.

Exit codes
----------
0  every requested stage completed
1  unexpected internal error
2  usage, configuration or input-file error
3  reliability stage failed
4  parallel analysis or EFA stage failed
5  CFA stage failed
6  invariance stage failed (age ladder in ``pipeline``)
7  personality ladders failed (``pipeline``; includes missing BFI columns)
8  simulation failed
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from . import __version__
from .instrument import (
    Instrument,
    ResponseDataset,
    SchemaError,
    bfi10_instrument,
    bfi10_scores,
    bundled_model_text,
    group_from_column,
    hate_speech_instrument,
    load_instrument,
    load_responses,
    median_split,
)
from .pipeline import (
    SCHEMA,
    SCHEMA_VERSION,
    Section,
    StageError,
    age_grouping,
    cfa_section,
    clean,
    efa_stage,
    invariance_stage,
    parallel_stage,
    personality_groupings,
    reliability_stage,
)
from .report import format_pvalue_code
from .sem import ModelSpec, SampleStats, parse_model
from .simulator import BUILTIN_POPULATIONS, load_population, perturb, sample

__all__ = ["RunConfig", "main", "run", "cmd_alpha", "cmd_pipeline", "format_pvalue_code", "EXIT_CODES"]

EXIT_CODES = {
    "ok": 0,
    "internal": 1,
    "input": 2,
    "reliability": 3,
    "parallel_analysis": 4,
    "efa": 4,
    "cfa": 5,
    "invariance": 6,
    "invariance_age": 6,
    "invariance_personality": 7,
    "simulate": 8,
}

COMMANDS = ("alpha", "efa", "cfa", "invariance", "simulate", "pipeline")

# Fields that change where or how output is written but never its content.
_PRESENTATION = ("format", "threads", "output_dir", "output")


@dataclass
class RunConfig:
    command: str = "pipeline"
    data: str | None = None
    instrument: str | None = None
    bfi: str | None = None
    model: str | None = None
    items: list[str] | None = None
    group_by: str | None = None
    split: str = "age"
    cut: str = "18-33"
    age_column: str = "age"
    alpha: float = 0.05
    seed: int = 0
    replications: int = 100
    quantile: float = 0.95
    parallel_analysis: bool = False
    factors: int | None = None
    rotate: str = "promax"
    suppress: float = 0.10
    mod_indices: bool = False
    top: int = 10
    subscales: bool = False
    likelihood: str = "normal"
    population: str = "five-factor"
    n: list[int] | None = None
    perturb: list[str] = field(default_factory=list)
    replication: int = 0
    format: str = "text"
    threads: int = 1
    output_dir: str | None = None
    output: str | None = None

    def provenance(self) -> dict:
        """Content-determining fields, embedded in structured output."""
        return {k: v for k, v in asdict(self).items() if k not in _PRESENTATION}


class ConfigError(ValueError):
    pass


_ENV = {"RATERPSY_SEED": ("seed", int), "RATERPSY_OUTPUT_DIR": ("output_dir", str), "RATERPSY_THREADS": ("threads", int)}

_LIST_FIELDS = {"items": str, "n": int}


def _coerce(name: str, value):
    if value is None:
        return None
    if name in _LIST_FIELDS:
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split() if v]
        return [_LIST_FIELDS[name](v) for v in value]
    if name == "perturb":
        return [value] if isinstance(value, str) else [str(v) for v in value]
    return value


def resolve_config(command: str, explicit: dict, env=None) -> RunConfig:
    """Layer defaults < config file < environment < explicit flags."""
    env = os.environ if env is None else env
    known = {f.name for f in fields(RunConfig)}
    merged: dict = {}
    path = explicit.get("config")
    if path:
        try:
            doc = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if doc is None:
            doc = {}
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must hold a mapping")
        for k, v in doc.items():
            key = str(k).replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown config key {k!r}")
            merged[key] = v
    for var, (key, typ) in _ENV.items():
        if env.get(var):
            try:
                merged[key] = typ(env[var])
            except ValueError:
                raise ConfigError(f"{var}={env[var]!r} is not a valid {typ.__name__}") from None
    for k, v in explicit.items():
        if k != "config":
            merged[k] = v
    merged = {k: _coerce(k, v) for k, v in merged.items()}
    merged["command"] = command
    cfg = RunConfig(**merged)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    if cfg.format == "structured":
        cfg.format = "json"
    if cfg.format not in ("text", "json"):
        raise ConfigError(f"format must be text or json, got {cfg.format!r}")
    if not 0 < cfg.alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    if cfg.threads < 1:
        raise ConfigError("threads must be at least 1")
    if cfg.split not in ("age", "median", "column"):
        raise ConfigError(f"split must be age, median or column, got {cfg.split!r}")
    if cfg.likelihood not in ("normal", "wishart"):
        raise ConfigError("likelihood must be normal or wishart")


# -- inputs -------------------------------------------------------------------


def _instrument(cfg: RunConfig) -> Instrument:
    return load_instrument(cfg.instrument) if cfg.instrument else hate_speech_instrument()


def _bfi(cfg: RunConfig) -> Instrument:
    return load_instrument(cfg.bfi) if cfg.bfi else bfi10_instrument()


def _model(cfg: RunConfig) -> ModelSpec:
    text = Path(cfg.model).read_text() if cfg.model else bundled_model_text()
    return parse_model(text)


def _dataset(cfg: RunConfig, instruments) -> ResponseDataset:
    if not cfg.data:
        raise ConfigError("no dataset given (--data)")
    try:
        text = Path(cfg.data).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {cfg.data}: {exc}") from None
    return load_responses(text, instruments)


# -- documents ------------------------------------------------------------------


class Run:
    """Accumulates sections; text is streamed so partial output survives a failure."""

    def __init__(self, cfg: RunConfig, stream=None):
        self.cfg = cfg
        self.sections: list[Section] = []
        self.error: dict | None = None
        self.exit_code = 0
        self.stream = stream if stream is not None else sys.stdout

    def add(self, section: Section):
        self.sections.append(section)
        if self.cfg.format == "text":
            if len(self.sections) > 1:
                self.stream.write("\n")
            self.stream.write(section.text)
            self.stream.flush()

    def stage(self, name: str, fn, *args, **kwargs):
        """Run one stage, recording warnings; failures become a stage error."""
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                out = fn(*args, **kwargs)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
        messages = sorted({str(w.message) for w in caught})
        for msg in messages:
            print(f"warning [{name}]: {msg}", file=sys.stderr)
        sections = out if isinstance(out, (list, tuple)) else [out]
        for s in sections:
            if isinstance(s, Section):
                if messages:
                    s.data = {**s.data, "warnings": messages}
                self.add(s)
        return out

    def fail(self, stage: str, message: str):
        self.exit_code = EXIT_CODES.get(stage, 1)
        self.error = {"stage": stage, "message": message, "exit_code": self.exit_code}
        print(f"error [{stage}]: {message}", file=sys.stderr)

    def document(self) -> dict:
        return clean(
            {
                "schema": f"{SCHEMA}/{SCHEMA_VERSION}",
                "version": __version__,
                "command": self.cfg.command,
                "config": self.cfg.provenance(),
                "status": "complete" if self.error is None else "failed",
                "exit_code": self.exit_code,
                "error": self.error,
                "sections": [s.to_dict() for s in self.sections],
            }
        )

    def text(self) -> str:
        return "\n".join(s.text for s in self.sections)


def dumps(doc: dict) -> str:
    """Canonical JSON bytes of a report document."""
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False, ensure_ascii=False) + "\n"


# -- commands -------------------------------------------------------------------


def cmd_alpha(cfg: RunConfig, run: Run):
    inst = _instrument(cfg)
    data = _dataset(cfg, [inst])
    missing = [c for c in inst.columns if c not in data.frame.columns]
    if missing:
        raise StageError("reliability", f"dataset lacks item columns {missing}")
    run.stage("reliability", reliability_stage, data, inst)


def _efa_items(cfg: RunConfig, inst: Instrument, data: ResponseDataset) -> list[str]:
    items = cfg.items or [c for c in inst.columns if c in data.frame.columns]
    missing = [c for c in items if c not in data.frame.columns]
    if missing:
        raise StageError("efa", f"dataset lacks item columns {missing}")
    return items


def _efa_k(cfg: RunConfig, pa) -> int:
    k = cfg.factors if cfg.factors is not None else pa.n_retained
    if k < 1:
        raise StageError("efa", "parallel analysis retained no factors")
    return k


def cmd_efa(cfg: RunConfig, run: Run):
    inst = _instrument(cfg)
    data = _dataset(cfg, [inst])
    items = _efa_items(cfg, inst, data)
    pa = None
    if cfg.parallel_analysis:
        _, pa = run.stage(
            "parallel_analysis", parallel_stage, data, items, cfg.replications, cfg.quantile, cfg.seed, cfg.threads
        )
    elif cfg.factors is None:
        raise ConfigError("efa needs --factors or --parallel-analysis")
    k = _efa_k(cfg, pa)
    run.stage("efa", efa_stage, data, items, k, cfg.rotate, cfg.suppress, inst)


def _cfa(cfg: RunConfig, spec: ModelSpec, data: ResponseDataset, mod_indices: bool) -> Section:
    stats = SampleStats.from_dataset(data, spec.observed, likelihood=cfg.likelihood)
    return cfa_section(spec, stats, mod_indices=mod_indices, top=cfg.top, threads=cfg.threads)


def cmd_cfa(cfg: RunConfig, run: Run):
    inst = _instrument(cfg)
    spec = _model(cfg)
    data = _dataset(cfg, [inst])
    run.stage("cfa", _cfa, cfg, spec, data, cfg.mod_indices)


def _grouping(cfg: RunConfig, data: ResponseDataset, bfi: Instrument):
    if cfg.split == "age":
        return age_grouping(data, cfg.group_by or cfg.age_column, cfg.cut), f"age ({cfg.cut} and below vs above)"
    if not cfg.group_by:
        raise ConfigError(f"--split {cfg.split} needs --group-by")
    if cfg.split == "median":
        if cfg.group_by in data.frame.columns:
            return median_split(data, cfg.group_by), f"{cfg.group_by} (median split)"
        if cfg.group_by in bfi.constructs:
            scores, _ = bfi10_scores(data, bfi)
            return median_split(data, cfg.group_by, scores=scores[cfg.group_by]), f"{cfg.group_by} (median split)"
        raise SchemaError(f"{cfg.group_by!r} is neither a dataset column nor a BFI trait")
    return group_from_column(data, cfg.group_by), cfg.group_by


def cmd_invariance(cfg: RunConfig, run: Run):
    inst = _instrument(cfg)
    bfi = _bfi(cfg)
    spec = _model(cfg)
    data = _dataset(cfg, [inst, bfi])

    def stage():
        grouping, label = _grouping(cfg, data, bfi)
        return invariance_stage("invariance", spec, data, grouping, cfg.alpha, cfg.subscales, inst, label, cfg.threads)

    run.stage("invariance", stage)


def _population(cfg: RunConfig):
    if cfg.population in BUILTIN_POPULATIONS:
        model = BUILTIN_POPULATIONS[cfg.population](seed=cfg.seed)
    else:
        model = load_population(cfg.population).with_seed(cfg.seed)
    if cfg.n:
        sizes = cfg.n if len(cfg.n) == len(model.groups) else cfg.n * len(model.groups) if len(cfg.n) == 1 else None
        if sizes is None:
            raise ConfigError(f"--n lists {len(cfg.n)} sizes for {len(model.groups)} groups")
        model = model.with_sizes(*sizes)
    for spec in cfg.perturb:
        try:
            g, kind, amount = spec.split(":")
            model = perturb(model, int(g) - 1, kind, float(amount))
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"bad --perturb {spec!r} (want GROUP:KIND:AMOUNT, group from 1): {exc}") from None
    return model


def cmd_simulate(cfg: RunConfig, run: Run):
    model = _population(cfg)

    def stage():
        data = sample(model, cfg.replication, instruments=())
        csv = data.to_csv()
        if cfg.output:
            Path(cfg.output).write_text(csv)
        doc = {"population": model.to_dict(), "replication": cfg.replication, "rows": data.n, "columns": list(data.frame.columns)}
        if not cfg.output:
            doc["csv"] = csv
        text = csv if not cfg.output else f"wrote {data.n} rows to {cfg.output}\n"
        return Section("simulate", doc, text)

    run.stage("simulate", stage)


def cmd_pipeline(cfg: RunConfig, run: Run):
    inst = _instrument(cfg)
    bfi = _bfi(cfg)
    spec = _model(cfg)
    data = _dataset(cfg, [inst, bfi])

    # Reliability
    missing = [c for c in inst.columns if c not in data.frame.columns]
    if missing:
        raise StageError("reliability", f"dataset lacks item columns {missing}")
    run.stage("reliability", reliability_stage, data, inst)

    # Exploratory factor analysis
    items = _efa_items(cfg, inst, data)
    _, pa = run.stage(
        "parallel_analysis", parallel_stage, data, items, cfg.replications, cfg.quantile, cfg.seed, cfg.threads
    )
    run.stage("efa", efa_stage, data, items, _efa_k(cfg, pa), cfg.rotate, cfg.suppress, inst)

    # Confirmatory model
    run.stage("cfa", _cfa, cfg, spec, data, True)

    # Age ladder
    def age():
        grouping = age_grouping(data, cfg.age_column, cfg.cut)
        return invariance_stage(
            "invariance_age", spec, data, grouping, cfg.alpha, True, inst, f"age ({cfg.cut} and below vs above)", cfg.threads
        )

    run.stage("invariance_age", age)

    # Personality ladders, one per BFI trait
    def personality():
        splits = personality_groupings(data, bfi)

        def one(job):
            trait, grouping = job
            return invariance_stage(
                "invariance_personality", spec, data, grouping, cfg.alpha, True, inst, f"{trait} (median split)"
            )

        if cfg.threads > 1:
            with ThreadPoolExecutor(cfg.threads) as pool:
                sections = list(pool.map(one, splits))
        else:
            sections = [one(j) for j in splits]
        for (trait, _), s in zip(splits, sections):
            s.data = {"trait": trait, **s.data}
        return sections

    run.stage("invariance_personality", personality)


_HANDLERS = {
    "alpha": cmd_alpha,
    "efa": cmd_efa,
    "cfa": cmd_cfa,
    "invariance": cmd_invariance,
    "simulate": cmd_simulate,
    "pipeline": cmd_pipeline,
}


def run(cfg: RunConfig, stream=None) -> Run:
    """Execute ``cfg``; never raises for analysis failures."""
    r = Run(cfg, stream)
    try:
        _HANDLERS[cfg.command](cfg, r)
    except StageError as exc:
        r.fail(exc.stage, str(exc).split("] ", 1)[-1])
    except (ConfigError, SchemaError, OSError, ValueError) as exc:
        r.fail("input", f"{type(exc).__name__}: {exc}")
    return r


# -- argument parsing -------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False, argument_default=S)
    common.add_argument("--config", help="YAML or JSON file of RunConfig fields")
    common.add_argument("--format", choices=("text", "json", "structured"))
    common.add_argument("--threads", type=int)
    common.add_argument("--output-dir", help="also write <command>.json and <command>.txt here")
    common.add_argument("--seed", type=int)

    data = argparse.ArgumentParser(add_help=False, argument_default=S)
    data.add_argument("--data", help="response CSV")
    data.add_argument("--instrument", help="instrument definition file (default: bundled hate-speech scale)")

    model = argparse.ArgumentParser(add_help=False, argument_default=S)
    model.add_argument("--model", help="model syntax file (default: bundled five-factor model)")
    model.add_argument("--likelihood", choices=("normal", "wishart"))

    p = argparse.ArgumentParser(prog="raterpsy", description="Psychometric analysis of annotator disagreement.")
    p.add_argument("--version", action="version", version=f"raterpsy {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("alpha", parents=[common, data], argument_default=S, help="Cronbach's alpha per construct")

    e = sub.add_parser("efa", parents=[common, data], argument_default=S, help="exploratory factor analysis")
    e.add_argument("--parallel-analysis", action="store_true")
    e.add_argument("--replications", type=int)
    e.add_argument("--quantile", type=float)
    e.add_argument("--factors", type=int)
    e.add_argument("--rotate", choices=("promax", "varimax", "none"))
    e.add_argument("--suppress", type=float)
    e.add_argument("--items", help="comma-separated item columns")

    c = sub.add_parser("cfa", parents=[common, data, model], argument_default=S, help="confirmatory factor analysis")
    c.add_argument("--mod-indices", action="store_true")
    c.add_argument("--top", type=int)

    i = sub.add_parser("invariance", parents=[common, data, model], argument_default=S, help="invariance ladder")
    i.add_argument("--group-by", help="covariate column or BFI trait name")
    i.add_argument("--split", choices=("median", "age", "column"))
    i.add_argument("--cut", help="age cut: band label such as 18-33, or a number")
    i.add_argument("--alpha", type=float)
    i.add_argument("--subscales", action="store_true")
    i.add_argument("--bfi", help="BFI instrument file (default: bundled BFI-10)")

    s = sub.add_parser("simulate", parents=[common], argument_default=S, help="draw a synthetic dataset")
    s.add_argument("--population", help=f"built-in name ({', '.join(sorted(BUILTIN_POPULATIONS))}) or JSON file")
    s.add_argument("--n", help="per-group sample sizes, comma-separated")
    s.add_argument("--perturb", action="append", help="GROUP:KIND:AMOUNT, kind in loadings/intercepts/residuals")
    s.add_argument("--replication", type=int)
    s.add_argument("--output", help="CSV destination (default: stdout)")

    pl = sub.add_parser("pipeline", parents=[common, data, model], argument_default=S, help="full analysis")
    pl.add_argument("--bfi", help="BFI instrument file (default: bundled BFI-10)")
    pl.add_argument("--replications", type=int)
    pl.add_argument("--factors", type=int)
    pl.add_argument("--cut")
    pl.add_argument("--age-column")
    pl.add_argument("--alpha", type=float)
    pl.add_argument("--suppress", type=float)
    pl.add_argument("--items")
    return p


def main(argv=None) -> int:
    args = vars(_parser().parse_args(argv))
    command = args.pop("command")
    try:
        cfg = resolve_config(command, args)
    except (ConfigError, TypeError) as exc:
        print(f"error [input]: {exc}", file=sys.stderr)
        return EXIT_CODES["input"]
    try:
        r = run(cfg)
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error [internal]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CODES["internal"]
    doc = r.document()
    if cfg.format == "json":
        sys.stdout.write(dumps(doc))
    if cfg.output_dir:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{command}.json").write_text(dumps(doc))
        (out / f"{command}.txt").write_text(r.text())
    return r.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
