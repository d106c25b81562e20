"""Mortality covariate, cohort covariate and design-matrix expansion.

Single population::

    y_xt = a_x + b_x k_t + c_x k_t^2 + g_x (t - x)

Multipopulation::

    y_cgxt = a_c + a_g + a_x + b_cgx k_t + c_cgx k_t^2 + g_cgx (t - x)

The age block carries the intercept (one dummy per age, no global
constant); country and gender use treatment coding against their
lexicographically first level.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataio import PanelDataset
from .errors import KtCoverageGap, RaggedPanel, UnknownLevel

POPULATION_MODES = ("single", "multi")
CORRELATIONS = ("independence", "exchangeable", "ar1", "unstructured")


@dataclass(frozen=True)
class ModelSpec:
    population_mode: str = "single"
    correlation: str = "exchangeable"
    weighted: bool = False
    age_range: tuple[int, int] = (20, 80)
    train_years: tuple[int, int] = (1991, 2010)
    # None -> training-set mean cohort, rounded to an integer
    cohort_centering: float | None = None
    cohort: bool = True

    def __post_init__(self):
        if self.population_mode not in POPULATION_MODES:
            raise ValueError(f"population_mode must be one of {POPULATION_MODES}")
        if self.correlation not in CORRELATIONS:
            raise ValueError(f"correlation must be one of {CORRELATIONS}")
        for name in ("age_range", "train_years"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be ordered, got {lo}:{hi}")


@dataclass
class KtSeries:
    years: np.ndarray
    values: np.ndarray
    variance: np.ndarray | None = None

    def __post_init__(self):
        self.years = np.asarray(self.years, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        if self.variance is not None:
            self.variance = np.asarray(self.variance, dtype=float)
        if self.years.shape != self.values.shape:
            raise ValueError("years and values differ in length")
        if len(self.years) > 1 and np.any(np.diff(self.years) != 1):
            raise KtCoverageGap("k_t years must be consecutive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("k_t values must be finite")

    def __len__(self):
        return len(self.years)

    def as_dict(self):
        return dict(zip(self.years.tolist(), self.values.tolist()))


@dataclass(eq=False)
class DesignMatrix:
    X: np.ndarray
    y: np.ndarray
    w: np.ndarray
    cluster_ids: list
    waves: np.ndarray
    column_names: list[str]
    population_mode: str = "single"
    # per-column term kind ("intercept", "kt", "kt2", "cohort") and block index (-1 = none)
    term_kind: list[str] = field(default_factory=list)
    column_block: np.ndarray | None = None
    row_block: np.ndarray | None = None
    kt: np.ndarray | None = None
    kt_variance: np.ndarray | None = None
    country: np.ndarray | None = None
    gender: np.ndarray | None = None
    age: np.ndarray | None = None
    blocks: list = field(default_factory=list)
    cohort_center: float = 0.0
    include_cohort: bool = True

    @property
    def n_obs(self):
        return self.X.shape[0]

    @property
    def n_params(self):
        return self.X.shape[1]

    def same_layout(self, other: "DesignMatrix") -> bool:
        return list(self.column_names) == list(other.column_names)


def compute_kt(panel: PanelDataset) -> KtSeries:
    """Year-by-year mean of the log rates over every cell of the panel.

    Every year must carry the same set of (country, gender, age) cells.
    """
    by_year: dict[int, list] = {}
    for i in range(len(panel)):
        cell = (panel.country[i], panel.gender[i], int(panel.age[i]))
        by_year.setdefault(int(panel.wave[i]), []).append((cell, float(panel.y[i])))
    years = sorted(by_year)
    reference = sorted(c for c, _ in by_year[years[0]])
    values = []
    for t in years:
        cells = sorted(by_year[t])
        if [c for c, _ in cells] != reference:
            raise RaggedPanel(f"year {t} does not observe the same cells as year {years[0]}")
        # fsum: exact rounding, independent of row order
        values.append(math.fsum(v for _, v in cells) / len(cells))
    if np.any(np.diff(years) != 1):
        raise RaggedPanel("training years are not consecutive")
    return KtSeries(years=years, values=values)


def _levels(values) -> list:
    return sorted(set(values))


def _resolve_center(spec: ModelSpec, year, age) -> float:
    if spec.cohort_centering is not None:
        return float(spec.cohort_centering)
    return float(math.floor(np.mean(np.asarray(year) - np.asarray(age)) + 0.5))


def _column_layout(mode, countries, genders, ages, blocks, include_cohort):
    names, kinds, cblock = [], [], []
    if mode == "multi":
        for c in countries[1:]:
            names.append(f"country{c}")
            kinds.append("intercept")
            cblock.append(-1)
        for g in genders[1:]:
            names.append(f"gender{g}")
            kinds.append("intercept")
            cblock.append(-1)
    for a in ages:
        names.append(f"age{a}")
        kinds.append("intercept")
        cblock.append(-1)
    terms = ["kt", "kt2"] + (["cohort"] if include_cohort else [])
    for term in terms:
        for b, key in enumerate(blocks):
            if mode == "single":
                label = f"age{key}"
            else:
                label = f"country{key[0]}:gender{key[1]}:age{key[2]}"
            names.append(f"{label}:{term}")
            kinds.append(term)
            cblock.append(b)
    return names, kinds, np.asarray(cblock, dtype=np.int64)


def _fill(X, names_index, mode, countries, genders, ages, blocks, country, gender, age, year, kt,
          center, include_cohort):
    n = X.shape[0]
    rows = np.arange(n)
    block_of = {k: i for i, k in enumerate(blocks)}
    age_pos = {a: i for i, a in enumerate(ages)}
    offset = 0
    if mode == "multi":
        for i in range(n):
            if country[i] != countries[0]:
                X[i, names_index[f"country{country[i]}"]] = 1.0
            if gender[i] != genders[0]:
                X[i, names_index[f"gender{gender[i]}"]] = 1.0
        offset = len(countries) - 1 + len(genders) - 1
    age_col = offset + np.array([age_pos[int(a)] for a in age], dtype=np.int64)
    X[rows, age_col] = 1.0
    if mode == "single":
        row_block = np.array([block_of[int(a)] for a in age], dtype=np.int64)
    else:
        row_block = np.array(
            [block_of[(country[i], gender[i], int(age[i]))] for i in range(n)], dtype=np.int64
        )
    nb = len(blocks)
    base = offset + len(ages)
    X[rows, base + row_block] = kt
    X[rows, base + nb + row_block] = kt * kt
    if include_cohort:
        X[rows, base + 2 * nb + row_block] = (np.asarray(year, dtype=float) - np.asarray(age, dtype=float)) - center
    return row_block


def build_design(panel: PanelDataset, kt: KtSeries, spec: ModelSpec) -> DesignMatrix:
    """Expand the single- or multipopulation mean model over the panel rows."""
    mode = spec.population_mode
    if panel.population_mode != mode:
        raise ValueError(f"panel built for {panel.population_mode!r} mode, spec asks for {mode!r}")
    lookup = kt.as_dict()
    missing = sorted({int(t) for t in panel.wave} - set(lookup))
    if missing:
        raise KtCoverageGap(f"k_t missing for years {missing[:5]}")
    kt_rows = np.array([lookup[int(t)] for t in panel.wave], dtype=float)
    countries = _levels(panel.country)
    genders = _levels(panel.gender)
    ages = _levels(int(a) for a in panel.age)
    if mode == "single":
        blocks = ages
    else:
        blocks = _levels((panel.country[i], panel.gender[i], int(panel.age[i])) for i in range(len(panel)))
    center = _resolve_center(spec, panel.wave, panel.age)
    names, kinds, cblock = _column_layout(mode, countries, genders, ages, blocks, spec.cohort)
    X = np.zeros((len(panel), len(names)))
    row_block = _fill(
        X, {n: i for i, n in enumerate(names)}, mode, countries, genders, ages, blocks,
        panel.country, panel.gender, panel.age, panel.wave, kt_rows, center, spec.cohort,
    )
    return DesignMatrix(
        X=X,
        y=panel.y.copy(),
        w=panel.weight.copy(),
        cluster_ids=list(panel.cluster_id),
        waves=panel.wave.copy(),
        column_names=names,
        population_mode=mode,
        term_kind=kinds,
        column_block=cblock,
        row_block=row_block,
        kt=kt_rows,
        country=panel.country.copy(),
        gender=panel.gender.copy(),
        age=panel.age.copy(),
        blocks=list(blocks),
        cohort_center=center,
        include_cohort=spec.cohort,
    )


def future_design(
    template: DesignMatrix,
    populations: Sequence[tuple[str, str]],
    ages: Sequence[int],
    future_years: Sequence[int],
    kt_forecast: KtSeries,
    weights: dict | None = None,
) -> DesignMatrix:
    """Design rows for every (population, age, future year), in that order.

    The column layout, level coding and cohort centering are copied from the
    training design ``template``. ``weights`` maps ``(country, gender, age)``
    to a prior weight (default 1). Responses are NaN.
    """
    mode = template.population_mode
    tpl_countries = _levels(template.country)
    tpl_genders = _levels(template.gender)
    tpl_ages = _levels(int(a) for a in template.age)
    tpl_pops = set(zip(template.country, template.gender))
    block_set = set(template.blocks)
    for pop in populations:
        if tuple(pop) not in tpl_pops:
            raise UnknownLevel(f"population {tuple(pop)} not present in training data")
    for a in ages:
        if int(a) not in tpl_ages:
            raise UnknownLevel(f"age {a} not present in training data")
    if mode == "multi":
        for c, g in populations:
            for a in ages:
                if (c, g, int(a)) not in block_set:
                    raise UnknownLevel(f"cell {(c, g, a)} not present in training data")
    lookup = kt_forecast.as_dict()
    gaps = [t for t in future_years if int(t) not in lookup]
    if gaps:
        raise KtCoverageGap(f"k_t forecast missing for years {gaps[:5]}")
    var_lookup = (
        dict(zip(kt_forecast.years.tolist(), kt_forecast.variance.tolist()))
        if kt_forecast.variance is not None else None
    )
    country, gender, age, year = [], [], [], []
    for c, g in populations:
        for a in ages:
            for t in future_years:
                country.append(c)
                gender.append(g)
                age.append(int(a))
                year.append(int(t))
    n = len(year)
    kt_rows = np.array([lookup[t] for t in year], dtype=float)
    X = np.zeros((n, len(template.column_names)))
    if n:
        row_block = _fill(
            X, {nm: i for i, nm in enumerate(template.column_names)}, mode, tpl_countries, tpl_genders,
            tpl_ages, template.blocks, np.asarray(country, dtype=object), np.asarray(gender, dtype=object),
            np.asarray(age), np.asarray(year), kt_rows, template.cohort_center, template.include_cohort,
        )
    else:
        row_block = np.zeros(0, dtype=np.int64)
    w = np.array([(weights or {}).get((c, g, a), 1.0) for c, g, a in zip(country, gender, age)], dtype=float)
    cluster_ids = [a if mode == "single" else (c, g, a) for c, g, a in zip(country, gender, age)]
    return DesignMatrix(
        X=X,
        y=np.full(n, np.nan),
        w=w,
        cluster_ids=cluster_ids,
        waves=np.asarray(year, dtype=np.int64),
        column_names=list(template.column_names),
        population_mode=mode,
        term_kind=list(template.term_kind),
        column_block=template.column_block.copy(),
        row_block=row_block,
        kt=kt_rows,
        kt_variance=np.array([var_lookup[t] for t in year], dtype=float) if var_lookup is not None else None,
        country=np.asarray(country, dtype=object),
        gender=np.asarray(gender, dtype=object),
        age=np.asarray(age, dtype=np.int64),
        blocks=list(template.blocks),
        cohort_center=template.cohort_center,
        include_cohort=template.include_cohort,
    )
