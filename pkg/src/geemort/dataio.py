"""Ingestion of age-specific death rates and conversion to a clustered panel.

Two input layouts are understood:

* ``long``: one row per (country, gender, year, age) with a ``rate`` column
  and an optional ``exposure`` column.
* ``mx``: the wide layout distributed by public mortality databases
  (``Year Age Female Male Total``), whitespace or comma separated, possibly
  preceded by free-text banner lines.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

import numpy as np

from .errors import (
    BadValue,
    DuplicateKey,
    EmptyInput,
    InconsistentPanel,
    InputIOError,
    MissingColumn,
    MissingExposure,
)

if TYPE_CHECKING:
    from .design import ModelSpec

FIELDS = ("country", "gender", "year", "age", "rate", "exposure")
DEFAULT_SCHEMA = {f: f for f in FIELDS}
MX_SEXES = {"Female": "f", "Male": "m", "Total": "t"}


@dataclass(frozen=True)
class MortalityRecord:
    country: str
    gender: str
    year: int
    age: int
    rate: float
    exposure: float | None = None

    @property
    def key(self):
        return (self.country, self.gender, self.year, self.age)


@dataclass(eq=False)
class PanelDataset:
    """Long-format observations grouped into clusters observed at ordered waves.

    Rows are stored sorted by ``(cluster_id, wave)`` so every cluster occupies
    a contiguous block. ``cluster_id`` is the age (single population) or the
    tuple ``(country, gender, age)`` (multipopulation).
    """

    population_mode: str
    cluster_id: list
    wave: np.ndarray
    y: np.ndarray
    weight: np.ndarray
    country: np.ndarray
    gender: np.ndarray
    age: np.ndarray
    cluster_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.wave = np.asarray(self.wave, dtype=np.int64)
        self.age = np.asarray(self.age, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=float)
        self.weight = np.asarray(self.weight, dtype=float)
        self.country = np.asarray(self.country, dtype=object)
        self.gender = np.asarray(self.gender, dtype=object)
        n = len(self.cluster_id)
        for name in ("wave", "y", "weight", "country", "gender", "age"):
            if len(getattr(self, name)) != n:
                raise InconsistentPanel(f"column {name} has length {len(getattr(self, name))}, expected {n}")
        if not np.all(np.isfinite(self.y)):
            raise InconsistentPanel("non-finite response")
        if not np.all((self.weight > 0) & np.isfinite(self.weight)):
            raise InconsistentPanel("weights must be finite and positive")
        index: dict = {}
        for pos, cid in enumerate(self.cluster_id):
            index.setdefault(cid, []).append(pos)
        for cid, rows in index.items():
            waves = self.wave[rows]
            if np.any(np.diff(waves) <= 0):
                raise InconsistentPanel(f"cluster {cid!r}: waves not strictly increasing")
        self.cluster_index = {k: np.asarray(v, dtype=np.int64) for k, v in index.items()}

    def __len__(self):
        return len(self.cluster_id)

    @property
    def year(self):
        return self.wave

    @property
    def n_clusters(self):
        return len(self.cluster_index)

    def cluster_sizes(self):
        return {k: len(v) for k, v in self.cluster_index.items()}

    def equals(self, other: "PanelDataset") -> bool:
        return (
            self.population_mode == other.population_mode
            and list(self.cluster_id) == list(other.cluster_id)
            and np.array_equal(self.wave, other.wave)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.weight, other.weight)
            and list(self.country) == list(other.country)
            and list(self.gender) == list(other.gender)
            and np.array_equal(self.age, other.age)
        )

    __eq__ = equals
    __hash__ = None


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _parse_int(text: str, row: int, column: str) -> int:
    t = text.strip()
    if t.endswith("+"):
        t = t[:-1]
    try:
        return int(t)
    except ValueError:
        raise BadValue(row, column, f"not an integer: {text!r}") from None


def _parse_positive(text: str, row: int, column: str, what: str = "rate") -> float:
    t = text.strip()
    if t == "" or t == ".":
        raise BadValue(row, column, f"empty {what}")
    try:
        v = float(t)
    except ValueError:
        raise BadValue(row, column, f"not a number: {text!r}") from None
    if not math.isfinite(v) or v <= 0:
        raise BadValue(row, column, f"{what} must be positive and finite (log undefined), got {text!r}")
    return v


def _check_unique(records: Iterable[MortalityRecord]) -> None:
    seen = set()
    for r in records:
        if r.key in seen:
            raise DuplicateKey(f"duplicate key {r.key}")
        seen.add(r.key)


def load_csv(path, schema: dict | None = None) -> list[MortalityRecord]:
    """Read a long-format CSV into records.

    ``schema`` maps the logical fields ``country, gender, year, age, rate,
    exposure`` to column names; unmapped fields keep their default name. The
    exposure column is optional: when absent every record has
    ``exposure=None``.
    """
    path = Path(path)
    cols = dict(DEFAULT_SCHEMA)
    if schema:
        cols.update(schema)
    if not path.is_file():
        raise InputIOError(str(path))
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyInput(f"{path}: no header row") from None
        pos = {}
        for f in FIELDS:
            name = cols.get(f)
            if name in header:
                pos[f] = header.index(name)
            elif f != "exposure":
                raise MissingColumn(name)
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                row = row + [""] * (len(header) - len(row))
            exposure = None
            if "exposure" in pos and row[pos["exposure"]].strip() != "":
                exposure = _parse_positive(row[pos["exposure"]], lineno, cols["exposure"], "exposure")
            records.append(
                MortalityRecord(
                    country=row[pos["country"]].strip(),
                    gender=row[pos["gender"]].strip(),
                    year=_parse_int(row[pos["year"]], lineno, cols["year"]),
                    age=_parse_int(row[pos["age"]], lineno, cols["age"]),
                    rate=_parse_positive(row[pos["rate"]], lineno, cols["rate"]),
                    exposure=exposure,
                )
            )
    _check_unique(records)
    return records


def _read_mx_table(path: Path):
    if not path.is_file():
        raise InputIOError(str(path))
    lines = path.read_text(encoding="utf-8").splitlines()
    for start, line in enumerate(lines):
        tokens = [t for t in re.split(r"[\s,]+", line.strip()) if t]
        if len(tokens) >= 3 and tokens[0] == "Year" and tokens[1] == "Age":
            header = tokens
            break
    else:
        raise MissingColumn("Year/Age header line")
    rows = []
    for lineno in range(start + 1, len(lines)):
        tokens = [t for t in re.split(r"[\s,]+", lines[lineno].strip()) if t]
        if tokens:
            if len(tokens) != len(header):
                raise BadValue(lineno + 1, "*", f"expected {len(header)} fields, got {len(tokens)}")
            rows.append((lineno + 1, dict(zip(header, tokens))))
    return header, rows


def load_mx(
    path,
    country: str | None = None,
    sexes: Iterable[str] = ("Female", "Male"),
    exposure_path=None,
    ages: tuple[int, int] | None = None,
    years: tuple[int, int] | None = None,
) -> list[MortalityRecord]:
    """Melt a wide ``Year Age Female Male Total`` death-rate table into records.

    ``ages``/``years`` (inclusive bounds) are applied before value
    validation, so unused cells outside the modelled range (often ``.`` or
    ``0`` at extreme ages) do not abort the load. ``country`` defaults to
    the file-name prefix before the first dot.
    """
    path = Path(path)
    if country is None:
        country = path.name.split(".")[0]
    header, rows = _read_mx_table(path)
    sexes = list(sexes)
    for s in sexes:
        if s not in header:
            raise MissingColumn(s)
    expo = None
    if exposure_path is not None:
        eheader, erows = _read_mx_table(Path(exposure_path))
        expo = {}
        for lineno, row in erows:
            key = (_parse_int(row["Year"], lineno, "Year"), _parse_int(row["Age"], lineno, "Age"))
            expo[key] = (lineno, row)

    def keep(year, age):
        if ages is not None and not ages[0] <= age <= ages[1]:
            return False
        if years is not None and not years[0] <= year <= years[1]:
            return False
        return True

    records = []
    for lineno, row in rows:
        year = _parse_int(row["Year"], lineno, "Year")
        age = _parse_int(row["Age"], lineno, "Age")
        if not keep(year, age):
            continue
        for s in sexes:
            exposure = None
            if expo is not None:
                if (year, age) not in expo:
                    raise MissingExposure(f"no exposure for year {year}, age {age}")
                elineno, erow = expo[(year, age)]
                exposure = _parse_positive(erow[s], elineno, s, "exposure")
            records.append(
                MortalityRecord(
                    country=country,
                    gender=MX_SEXES.get(s, s),
                    year=year,
                    age=age,
                    rate=_parse_positive(row[s], lineno, s),
                    exposure=exposure,
                )
            )
    _check_unique(records)
    return records


def write_records_csv(records: Iterable[MortalityRecord], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        w = csv.writer(handle, lineterminator="\n")
        w.writerow(FIELDS)
        for r in records:
            w.writerow([
                r.country, r.gender, r.year, r.age, _fmt(r.rate),
                "" if r.exposure is None else _fmt(r.exposure),
            ])


def _cluster_key(mode, country, gender, age):
    return int(age) if mode == "single" else (country, gender, int(age))


def to_panel(records: list[MortalityRecord], spec: "ModelSpec") -> PanelDataset:
    """Log-transform rates and group them into clusters.

    Records outside ``spec.age_range``/``spec.train_years`` are dropped.
    With ``spec.weighted`` the weight column is ``exposure / mean(exposure)``
    over the retained rows; a record without exposure is then an error.
    """
    if not records:
        raise EmptyInput("no records")
    mode = spec.population_mode
    if mode not in ("single", "multi"):
        raise ValueError(f"unknown population mode {mode!r}")
    a0, a1 = spec.age_range
    t0, t1 = spec.train_years
    kept = [r for r in records if a0 <= r.age <= a1 and t0 <= r.year <= t1]
    if not kept:
        raise EmptyInput(f"no records with ages {a0}:{a1} and years {t0}:{t1}")
    if mode == "multi":
        for r in kept:
            if ":" in r.country or ":" in r.gender:
                raise BadValue("-", "country/gender", f"label may not contain ':' ({r.country!r}, {r.gender!r})")
    kept.sort(key=lambda r: (_cluster_key(mode, r.country, r.gender, r.age), r.year))
    if spec.weighted:
        missing = [r.key for r in kept if r.exposure is None]
        if missing:
            raise MissingExposure(f"weighting requested but exposure missing for {missing[0]}")
        expo = np.array([r.exposure for r in kept], dtype=float)
        weight = expo / expo.mean()
    else:
        weight = np.ones(len(kept))
    cluster_id = [_cluster_key(mode, r.country, r.gender, r.age) for r in kept]
    for i in range(1, len(kept)):
        if cluster_id[i] == cluster_id[i - 1] and kept[i].year == kept[i - 1].year:
            raise InconsistentPanel(
                f"cluster {cluster_id[i]!r} has two observations in year {kept[i].year}; "
                "single-population mode needs exactly one (country, gender) population"
            )
    return PanelDataset(
        population_mode=mode,
        cluster_id=cluster_id,
        wave=[r.year for r in kept],
        y=np.log([r.rate for r in kept]),
        weight=weight,
        country=[r.country for r in kept],
        gender=[r.gender for r in kept],
        age=[r.age for r in kept],
    )


PANEL_COLUMNS = ("cluster", "country", "gender", "age", "year", "y", "weight")


def write_panel_csv(panel: PanelDataset, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        w = csv.writer(handle, lineterminator="\n")
        w.writerow(PANEL_COLUMNS)
        for i, cid in enumerate(panel.cluster_id):
            label = ":".join(str(c) for c in cid) if isinstance(cid, tuple) else str(cid)
            w.writerow([
                label, panel.country[i], panel.gender[i], int(panel.age[i]), int(panel.wave[i]),
                _fmt(panel.y[i]), _fmt(panel.weight[i]),
            ])


def read_panel_csv(path) -> PanelDataset:
    path = Path(path)
    if not path.is_file():
        raise InputIOError(str(path))
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        missing = [c for c in PANEL_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise MissingColumn(missing[0])
        rows = list(reader)
    if not rows:
        raise EmptyInput(str(path))
    mode = "multi" if ":" in rows[0]["cluster"] else "single"
    cluster_id = []
    for r in rows:
        parts = r["cluster"].split(":")
        cluster_id.append((parts[0], parts[1], int(parts[2])) if mode == "multi" else int(parts[0]))
    return PanelDataset(
        population_mode=mode,
        cluster_id=cluster_id,
        wave=[int(r["year"]) for r in rows],
        y=[float(r["y"]) for r in rows],
        weight=[float(r["weight"]) for r in rows],
        country=[r["country"] for r in rows],
        gender=[r["gender"] for r in rows],
        age=[int(r["age"]) for r in rows],
    )
