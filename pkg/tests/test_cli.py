import io
import json
import re

import pandas as pd
import pytest

from raterpsy.cli import (
    EXIT_CODES,
    ConfigError,
    RunConfig,
    dumps,
    main,
    resolve_config,
    run,
)
from raterpsy.instrument import bfi10_instrument
from raterpsy.simulator import annotator_population, sample

SEED = 20261014


@pytest.fixture(scope="module")
def annotators(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "annotators.csv"
    path.write_text(sample(annotator_population(seed=SEED)).to_csv())
    return path


@pytest.fixture(scope="module")
def no_bfi(tmp_path_factory, annotators):
    frame = pd.read_csv(annotators)
    frame = frame.drop(columns=bfi10_instrument().columns)
    path = tmp_path_factory.mktemp("data") / "no_bfi.csv"
    path.write_text(frame.to_csv(index=False))
    return path


@pytest.fixture(scope="module")
def pipeline_json(tmp_path_factory, annotators):
    out = tmp_path_factory.mktemp("out")
    code = main(["pipeline", "--data", str(annotators), "--seed", "5", "--output-dir", str(out), "--format", "text"])
    return code, (out / "pipeline.json").read_bytes(), (out / "pipeline.txt").read_text()


def structured(argv, capsys):
    code = main(argv + ["--format", "json"])
    out = capsys.readouterr()
    return code, json.loads(out.out), out.err


def test_alpha_reports_every_construct(annotators, capsys):
    code, doc, _ = structured(["alpha", "--data", str(annotators)], capsys)
    assert code == 0
    assert doc["schema"] == "raterpsy.report/1"
    reports = doc["sections"][0]["subscales"]
    assert len(reports) == 9
    assert [r["construct"] for r in reports][6:8] == ["Showing fear", "Target"]
    assert all(len(r["alpha_if_deleted"]) == len(r["items"]) for r in reports)


def test_alpha_single_construct_instrument(tmp_path, annotators, capsys):
    inst = tmp_path / "one.csv"
    inst.write_text("# name: one\nid,construct,reverse,text\n1,Violence,no,a\n2,Violence,no,b\n4,Violence,no,c\n")
    data = tmp_path / "three.csv"
    data.write_text(pd.read_csv(annotators)[["i1", "i2", "i4"]].to_csv(index=False))
    code, doc, _ = structured(["alpha", "--data", str(data), "--instrument", str(inst)], capsys)
    assert code == 0
    assert len(doc["sections"][0]["subscales"]) == 1


def test_alpha_missing_column_names_it(tmp_path, annotators, capsys):
    frame = pd.read_csv(annotators).drop(columns=["i17"])
    path = tmp_path / "short.csv"
    path.write_text(frame.to_csv(index=False))
    code = main(["alpha", "--data", str(path)])
    err = capsys.readouterr().err
    assert code == EXIT_CODES["reliability"] == 3
    assert "i17" in err


def test_missing_data_file_is_input_error(tmp_path, capsys):
    assert main(["alpha", "--data", str(tmp_path / "nope.csv")]) == 2
    assert "error [input]" in capsys.readouterr().err


def test_config_layering(tmp_path):
    cfg_file = tmp_path / "run.yml"
    cfg_file.write_text("seed: 3\nalpha: 0.01\nreplications: 200\n")
    env = {"RATERPSY_SEED": "9", "RATERPSY_THREADS": "2"}
    cfg = resolve_config("efa", {"config": str(cfg_file)}, env=env)
    assert (cfg.seed, cfg.alpha, cfg.replications, cfg.threads) == (9, 0.01, 200, 2)
    cfg = resolve_config("efa", {"config": str(cfg_file), "seed": 1}, env=env)
    assert cfg.seed == 1
    assert resolve_config("efa", {}, env={}).seed == RunConfig().seed
    json_file = tmp_path / "run.json"
    json_file.write_text(json.dumps({"rotate": "varimax", "items": "i1,i2,i3"}))
    cfg = resolve_config("efa", {"config": str(json_file)}, env={})
    assert cfg.rotate == "varimax" and cfg.items == ["i1", "i2", "i3"]


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.yml"
    bad.write_text("colour: red\n")
    with pytest.raises(ConfigError, match="colour"):
        resolve_config("alpha", {"config": str(bad)}, env={})
    with pytest.raises(ConfigError):
        resolve_config("alpha", {}, env={"RATERPSY_SEED": "x"})
    with pytest.raises(ConfigError):
        resolve_config("alpha", {"alpha": 1.5}, env={})
    assert resolve_config("alpha", {"format": "structured"}, env={}).format == "json"


def test_presentation_fields_do_not_enter_provenance():
    a = RunConfig(command="alpha", threads=1, format="text").provenance()
    b = RunConfig(command="alpha", threads=8, format="json", output_dir="/tmp/x").provenance()
    assert a == b


def test_efa_with_parallel_analysis(annotators, capsys):
    items = ",".join(f"i{j}" for j in range(1, 12))
    code, doc, _ = structured(["efa", "--data", str(annotators), "--items", items, "--parallel-analysis", "--seed", "2"], capsys)
    assert code == 0
    pa, efa = doc["sections"]
    assert pa["stage"] == "parallel_analysis" and efa["stage"] == "efa"
    assert efa["k"] == pa["n_retained"] == len(efa["pattern"][0])


def test_efa_needs_factor_count(annotators, capsys):
    assert main(["efa", "--data", str(annotators)]) == 2
    capsys.readouterr()


def test_cfa_with_mod_indices(annotators, capsys):
    code, doc, _ = structured(["cfa", "--data", str(annotators), "--mod-indices", "--top", "3"], capsys)
    assert code == 0
    sec = doc["sections"][0]
    assert sec["indices"]["df"] == 55
    mis = [m["mi"] for m in sec["modification_indices"]]
    assert mis == sorted(mis, reverse=True)


def test_invariance_command_median_split_on_trait(annotators, capsys):
    argv = ["invariance", "--data", str(annotators), "--split", "median", "--group-by", "Openness", "--subscales"]
    code, doc, _ = structured(argv, capsys)
    assert code == 0
    sec = doc["sections"][0]
    assert [lv["df"] for lv in sec["full_model"]["levels"]] == [110, 118, 126, 139]
    assert set(sec["group_counts"]) == {"low", "high"}
    assert len(sec["subscales"]) == 5


def test_simulate_command(tmp_path, capsys):
    out = tmp_path / "sim.csv"
    code = main(["simulate", "--population", "five-factor", "--n", "40", "--seed", "3", "--output", str(out)])
    assert code == 0
    first = out.read_text()
    assert len(first.splitlines()) == 41
    main(["simulate", "--population", "five-factor", "--n", "40", "--seed", "3", "--output", str(out)])
    assert out.read_text() == first
    capsys.readouterr()
    assert main(["simulate", "--perturb", "1:bogus:2"]) == 2
    capsys.readouterr()


def test_simulate_perturb_and_json_population(tmp_path, capsys):
    pop = tmp_path / "pop.json"
    pop.write_text(json.dumps(annotator_population(seed=1, sizes=(30, 30)).to_dict()))
    code, doc, _ = structured(["simulate", "--population", str(pop), "--perturb", "2:intercepts:0.5"], capsys)
    assert code == 0
    groups = doc["sections"][0]["population"]["groups"]
    assert groups[1]["intercepts"][0] == pytest.approx(groups[0]["intercepts"][0] + 0.5)


def test_pipeline_structure(pipeline_json):
    code, raw, text = pipeline_json
    assert code == 0
    doc = json.loads(raw)
    stages = [s["stage"] for s in doc["sections"]]
    assert stages == ["reliability", "parallel_analysis", "efa", "cfa", "invariance_age"] + ["invariance_personality"] * 5
    traits = [s["trait"] for s in doc["sections"][5:]]
    assert traits == list(bfi10_instrument().constructs)
    assert doc["status"] == "complete" and doc["error"] is None
    assert text.count("Signif. codes") == 6 * 4
    assert "modification indices" in text


def test_pipeline_bytes_identical_across_runs_and_threads(pipeline_json, annotators, tmp_path):
    _, first, _ = pipeline_json
    out = tmp_path / "again"
    main(["pipeline", "--data", str(annotators), "--seed", "5", "--threads", "4", "--output-dir", str(out)])
    assert (out / "pipeline.json").read_bytes() == first


def test_pipeline_text_matches_structured_numbers(pipeline_json):
    _, raw, text = pipeline_json
    doc = json.loads(raw)
    age = doc["sections"][4]["full_model"]
    for lv in age["levels"]:
        row = f"{lv['level'].capitalize()}\t{lv['df']}\t{lv['aic']:.1f}\t{lv['bic']:.1f}\t{lv['chisq']:.4f}"
        assert row in text
    for rep in doc["sections"][0]["subscales"]:
        assert f"{rep['construct']}: alpha = {rep['alpha']:.3f}" in text
    cfa = doc["sections"][3]["indices"]
    assert re.search(rf"CFI = {cfa['cfi']:.3f}, RMSEA = {cfa['rmsea']:.3f}", text)


def test_pipeline_without_bfi_stops_after_age_ladder(no_bfi, capsys):
    cfg = resolve_config("pipeline", {"data": str(no_bfi), "format": "json"}, env={})
    r = run(cfg, stream=io.StringIO())
    capsys.readouterr()
    assert r.exit_code == EXIT_CODES["invariance_personality"] == 7
    stages = [s.stage for s in r.sections]
    assert stages == ["reliability", "parallel_analysis", "efa", "cfa", "invariance_age"]
    doc = r.document()
    assert doc["status"] == "failed"
    assert "BFI" in doc["error"]["message"]
    assert dumps(doc).endswith("}\n")


def test_text_mode_streams_sections_before_failure(no_bfi, capsys):
    code = main(["pipeline", "--data", str(no_bfi)])
    out = capsys.readouterr()
    assert code == 7
    assert "Reliability" in out.out and "Signif. codes" in out.out
    assert "error [invariance_personality]" in out.err
