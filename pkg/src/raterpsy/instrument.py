"""
Instruments (item banks), annotator response datasets and grouping rules.

Instrument definitions live in small CSV files with ``# key: value`` header
lines (``name``, ``prefix``, ``scale_points``) followed by one record per
item: ``id,construct,reverse,text``. Response files are comma-delimited with
a header row; item columns are named ``<prefix><id>`` (``i12``, ``b3``) and
every other column is a free-form covariate.
"""

from __future__ import annotations

import csv
import io
import re
import warnings
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence, TextIO

import numpy as np
import pandas as pd


class InstrumentError(ValueError):
    """Malformed instrument definition."""


class SchemaError(ValueError):
    """Response file columns do not match the instruments."""


class ResponseValidationError(ValueError):
    """A response value is outside the instrument's scale."""


class InputError(ValueError):
    """Empty or otherwise unusable input."""


class DegenerateGroupingError(ValueError):
    """A grouping rule put every respondent into a single level."""


@dataclass(frozen=True)
class Item:
    id: int
    text: str
    construct: str
    reverse_keyed: bool = False


@dataclass(frozen=True)
class Instrument:
    name: str
    items: tuple[Item, ...]
    scale_points: int = 5
    prefix: str = "i"

    def __post_init__(self):
        if self.scale_points < 2:
            raise InstrumentError("scale_points must be >= 2")
        ids = [it.id for it in self.items]
        if len(set(ids)) != len(ids):
            raise InstrumentError(f"duplicate item ids in instrument {self.name!r}")
        if any(i <= 0 for i in ids):
            raise InstrumentError("item ids must be positive integers")
        if not re.fullmatch(r"[A-Za-z_]+", self.prefix):
            raise InstrumentError(f"bad column prefix {self.prefix!r}")

    @property
    def constructs(self) -> list[str]:
        """Construct names in order of first appearance."""
        seen: dict[str, None] = {}
        for it in self.items:
            seen.setdefault(it.construct, None)
        return list(seen)

    def column(self, item_id: int) -> str:
        return f"{self.prefix}{item_id}"

    @property
    def columns(self) -> list[str]:
        return [self.column(it.id) for it in self.items]

    def item(self, item_id: int) -> Item:
        for it in self.items:
            if it.id == item_id:
                return it
        raise KeyError(item_id)

    def construct_columns(self, construct: str) -> list[str]:
        cols = [self.column(it.id) for it in self.items if it.construct == construct]
        if not cols:
            raise KeyError(construct)
        return cols

    def construct_of(self, column: str) -> str:
        for it in self.items:
            if self.column(it.id) == column:
                return it.construct
        raise KeyError(column)

    def to_text(self) -> str:
        """Serialize to the instrument definition format."""
        buf = io.StringIO()
        buf.write(f"# name: {self.name}\n")
        buf.write(f"# prefix: {self.prefix}\n")
        buf.write(f"# scale_points: {self.scale_points}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["id", "construct", "reverse", "text"])
        for it in self.items:
            writer.writerow([it.id, it.construct, int(it.reverse_keyed), it.text])
        return buf.getvalue()


def parse_instrument(text: str) -> Instrument:
    """Parse an instrument definition (see module docstring for the format)."""
    meta: dict[str, str] = {}
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, sep, value = line[1:].partition(":")
            if sep:
                meta[key.strip()] = value.strip()
            continue
        if line.strip():
            body.append(line)
    if not body:
        raise InstrumentError("instrument definition has no item records")
    reader = csv.DictReader(body)
    missing = {"id", "construct", "reverse", "text"} - set(reader.fieldnames or [])
    if missing:
        raise InstrumentError(f"instrument header lacks {sorted(missing)}")
    items = []
    for rec in reader:
        try:
            item_id = int(rec["id"])
        except (TypeError, ValueError):
            raise InstrumentError(f"bad item id {rec['id']!r}") from None
        flag = str(rec["reverse"]).strip().lower()
        if flag not in {"0", "1", "true", "false", "yes", "no"}:
            raise InstrumentError(f"bad reverse flag {rec['reverse']!r} for item {item_id}")
        items.append(
            Item(
                id=item_id,
                text=rec["text"],
                construct=rec["construct"].strip(),
                reverse_keyed=flag in {"1", "true", "yes"},
            )
        )
    return Instrument(
        name=meta.get("name", "instrument"),
        items=tuple(items),
        scale_points=int(meta.get("scale_points", 5)),
        prefix=meta.get("prefix", "i"),
    )


def load_instrument(path) -> Instrument:
    with open(path, encoding="utf-8") as fh:
        return parse_instrument(fh.read())


def _bundled(name: str) -> str:
    return resources.files("raterpsy").joinpath("data").joinpath(name).read_text(encoding="utf-8")


def hate_speech_instrument() -> Instrument:
    """The 39-item hate-speech evaluation scale."""
    return parse_instrument(_bundled("hate_speech.csv"))


def bfi10_instrument() -> Instrument:
    """BFI-10 with the Rammstedt & John (2007) reverse-keying."""
    return parse_instrument(_bundled("bfi10.csv"))


def bundled_model_text() -> str:
    """Text of the bundled five-factor, 13-item measurement model."""
    return _bundled("figure1.model")


@dataclass(frozen=True)
class ResponseDataset:
    """Annotator x column table. Missing responses are NaN."""

    frame: pd.DataFrame
    instruments: tuple[Instrument, ...] = ()

    @property
    def n(self) -> int:
        return len(self.frame)

    @property
    def item_columns(self) -> list[str]:
        return [c for inst in self.instruments for c in inst.columns if c in self.frame]

    @property
    def covariate_columns(self) -> list[str]:
        items = set(self.item_columns)
        return [c for c in self.frame.columns if c not in items]

    def instrument(self, name: str) -> Instrument:
        for inst in self.instruments:
            if inst.name == name:
                return inst
        raise KeyError(name)

    def has_columns(self, columns: Iterable[str]) -> bool:
        return all(c in self.frame.columns for c in columns)

    def complete(self, columns: Sequence[str], groups: "GroupAssignment | None" = None):
        """Listwise-deleted numeric matrix for ``columns`` (and group labels)."""
        missing = [c for c in columns if c not in self.frame.columns]
        if missing:
            raise SchemaError(f"dataset lacks columns {missing}")
        x = self.frame[list(columns)].to_numpy(dtype=float)
        keep = ~np.isnan(x).any(axis=1)
        if groups is None:
            return x[keep], None
        labels = np.asarray(groups.labels, dtype=object)
        keep &= np.array([lab is not None for lab in labels])
        return x[keep], labels[keep]

    def to_csv(self) -> str:
        return self.frame.to_csv(index=False, lineterminator="\n", float_format="%.10g")


def load_responses(source: TextIO | str, instruments: Instrument | Sequence[Instrument]) -> ResponseDataset:
    """Read a delimited response file and validate every item column.

    Parameters
    ----------
    source : file-like or str
        Open text stream, or CSV text.
    instruments : Instrument or sequence of Instrument
        Instruments whose ``<prefix><id>`` columns should be present. Item
        columns that are absent are allowed; columns carrying an instrument
        prefix but an unknown id are a schema error.

    Returns
    -------
    ResponseDataset
    """
    if isinstance(instruments, Instrument):
        instruments = (instruments,)
    instruments = tuple(instruments)
    text = source if isinstance(source, str) else source.read()
    if not text.strip():
        raise InputError("response file is empty")
    try:
        frame = pd.read_csv(io.StringIO(text))
    except pd.errors.EmptyDataError:
        raise InputError("response file is empty") from None

    known = {c: inst for inst in instruments for c in inst.columns}
    for col in frame.columns:
        if col in known:
            continue
        for inst in instruments:
            if re.fullmatch(rf"{re.escape(inst.prefix)}\d+", str(col)):
                raise SchemaError(f"column {col!r} is not an item of instrument {inst.name!r}")

    item_cols = [c for c in frame.columns if c in known]
    if not item_cols:
        raise SchemaError("no item columns resolvable to instrument items")
    if len(frame) < 2:
        raise InputError(f"need at least 2 respondents, got {len(frame)}")

    for col in item_cols:
        inst = known[col]
        values = pd.to_numeric(frame[col], errors="coerce")
        bad_type = values.isna() & frame[col].notna()
        if bad_type.any():
            row = int(np.flatnonzero(bad_type.to_numpy())[0]) + 1
            raise ResponseValidationError(
                f"row {row}, item {col}: non-numeric value {frame[col].iloc[row - 1]!r}"
            )
        out = values.notna() & ((values < 1) | (values > inst.scale_points))
        if out.any():
            row = int(np.flatnonzero(out.to_numpy())[0]) + 1
            raise ResponseValidationError(
                f"row {row}, item {col}: value {values.iloc[row - 1]:g} outside 1..{inst.scale_points}"
            )
        frame[col] = values.astype(float)
    return ResponseDataset(frame=frame, instruments=instruments)


@dataclass(frozen=True)
class GroupAssignment:
    labels: tuple[str | None, ...]
    rule: str
    levels: tuple[str, ...] = field(default=())

    def counts(self) -> dict[str, int]:
        return {lev: sum(1 for lab in self.labels if lab == lev) for lev in self.levels}


def _band_lower(label) -> float:
    match = re.match(r"\s*(\d+(?:\.\d+)?)", str(label))
    if not match:
        raise ValueError(f"cannot read an age from {label!r}")
    return float(match.group(1))


def age_binarize(dataset: ResponseDataset, cut: str | float, column: str = "age") -> GroupAssignment:
    """Split respondents into ``younger``/``older`` at an age cut.

    ``cut`` is either a band label such as ``"18-33"`` (that band and lower
    bands are "younger") or a number (ages at or below it are "younger").
    Band labels are ordered by their leading number.
    """
    if column not in dataset.frame.columns:
        raise SchemaError(f"dataset has no {column!r} covariate")
    raw = dataset.frame[column]
    if isinstance(cut, str):
        limit = _band_lower(cut)
        key = _band_lower
    else:
        limit = float(cut)
        key = float
    labels: list[str | None] = []
    for value in raw:
        if pd.isna(value):
            labels.append(None)
        else:
            labels.append("younger" if key(value) <= limit else "older")
    result = GroupAssignment(tuple(labels), rule=f"{column} <= {cut} -> younger", levels=("older", "younger"))
    counts = result.counts()
    if min(counts.values()) == 0:
        raise DegenerateGroupingError(f"age cut {cut!r} leaves one group empty: {counts}")
    return result


def median_split(dataset: ResponseDataset, score_column: str, scores=None) -> GroupAssignment:
    """Dichotomize a numeric covariate at its median: ``<= median`` is low.

    ``scores`` may be passed directly (one value per respondent, NaN for
    missing) instead of reading ``score_column`` from the dataset.
    """
    if scores is None:
        if score_column not in dataset.frame.columns:
            raise SchemaError(f"dataset has no {score_column!r} covariate")
        scores = dataset.frame[score_column]
    values = pd.to_numeric(pd.Series(scores), errors="coerce").to_numpy(dtype=float)
    ok = ~np.isnan(values)
    if np.unique(values[ok]).size < 2:
        raise DegenerateGroupingError(f"{score_column!r} has fewer than 2 distinct values")
    med = float(np.median(values[ok]))
    labels = tuple(None if not o else ("high" if v > med else "low") for v, o in zip(values, ok))
    return GroupAssignment(labels, rule=f"{score_column} > median ({med:g}) -> high", levels=("high", "low"))


def group_from_column(dataset: ResponseDataset, column: str) -> GroupAssignment:
    """Use an existing categorical covariate as the grouping."""
    if column not in dataset.frame.columns:
        raise SchemaError(f"dataset has no {column!r} covariate")
    labels = tuple(None if pd.isna(v) else str(v) for v in dataset.frame[column])
    levels = tuple(sorted({lab for lab in labels if lab is not None}))
    if len(levels) < 2:
        raise DegenerateGroupingError(f"{column!r} has a single level")
    return GroupAssignment(labels, rule=f"levels of {column}", levels=levels)


def bfi10_scores(dataset: ResponseDataset, instrument: Instrument | None = None):
    """Per-respondent Big Five trait scores.

    Each trait is the mean of its two items after reverse-keying
    (``scale_points + 1 - x``). Respondents with any missing BFI response are
    left unscored (NaN) and listed in the returned warnings.

    Returns
    -------
    scores : pandas.DataFrame
        One column per trait, in instrument order.
    excluded : list of int
        Row positions that could not be scored.
    """
    inst = instrument or bfi10_instrument()
    missing = [c for c in inst.columns if c not in dataset.frame.columns]
    if missing:
        raise SchemaError(f"dataset lacks BFI columns {missing}")
    x = dataset.frame[inst.columns].to_numpy(dtype=float).copy()
    for j, it in enumerate(inst.items):
        if it.reverse_keyed:
            x[:, j] = inst.scale_points + 1 - x[:, j]
    excluded = [int(i) for i in np.flatnonzero(np.isnan(x).any(axis=1))]
    if excluded:
        warnings.warn(f"{len(excluded)} respondents have missing BFI responses and were not scored")
    scores = {}
    for trait in inst.constructs:
        cols = [j for j, it in enumerate(inst.items) if it.construct == trait]
        scores[trait] = x[:, cols].mean(axis=1)
        scores[trait][excluded] = np.nan
    return pd.DataFrame(scores, index=dataset.frame.index), excluded
