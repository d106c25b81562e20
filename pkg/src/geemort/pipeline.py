"""Glue between the modules: records -> design -> fit -> forecast."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import MortalityRecord, PanelDataset, to_panel
from .design import DesignMatrix, KtSeries, ModelSpec, build_design, compute_kt, future_design
from .forecast import ForecastTable, RwDriftModel, fit_rw_drift, forecast_kt, predict
from .errors import UnbalancedForUnstructured
from .gee import GeeFit

CORSTR_LABELS = {
    "independence": "geeInd",
    "exchangeable": "geeEx",
    "ar1": "geeAr1",
    "unstructured": "geeUns",
}


@dataclass
class Prepared:
    panel: PanelDataset
    kt: KtSeries
    design: DesignMatrix


def prepare(records: list[MortalityRecord], spec: ModelSpec) -> Prepared:
    panel = to_panel(records, spec)
    # an unbalanced panel is also ragged for k_t; report the structural error first
    if spec.correlation == "unstructured":
        wave_sets = {tuple(panel.wave[rows]) for rows in panel.cluster_index.values()}
        if len(wave_sets) > 1:
            raise UnbalancedForUnstructured("unstructured correlation needs every cluster to share one wave set")
    kt = compute_kt(panel)
    return Prepared(panel, kt, build_design(panel, kt, spec))


def last_year_weights(design: DesignMatrix) -> dict:
    """Prior weight of each (country, gender, age) cell in its latest training year."""
    out, latest = {}, {}
    for c, g, a, t, w in zip(design.country, design.gender, design.age, design.waves, design.w):
        key = (c, g, int(a))
        if key not in latest or t > latest[key]:
            latest[key] = t
            out[key] = float(w)
    return out


@dataclass
class Forecast:
    rw: RwDriftModel
    kt_forecast: KtSeries
    design: DesignMatrix
    table: ForecastTable


def forecast(
    gee_fit: GeeFit,
    prepared: Prepared,
    horizon: int,
    mode: str = "prediction",
    cov: str = "max",
    level: float = 0.95,
    drift_uncertainty: bool = False,
) -> Forecast:
    rw = fit_rw_drift(prepared.kt)
    ktf = forecast_kt(rw, horizon, drift_uncertainty=drift_uncertainty)
    d = prepared.design
    populations = sorted(set(zip(d.country, d.gender)))
    ages = sorted(set(int(a) for a in d.age))
    fd = future_design(d, populations, ages, ktf.years.tolist(), ktf, weights=last_year_weights(d))
    table = predict(gee_fit, fd, level=level, mode=mode, cov=cov)
    return Forecast(rw, ktf, fd, table)


def age_mean_baseline(panel: PanelDataset, country, gender, age) -> np.ndarray:
    """Training mean log rate of each requested cell (naive benchmark)."""
    sums: dict = {}
    for c, g, a, y in zip(panel.country, panel.gender, panel.age, panel.y):
        s = sums.setdefault((c, g, int(a)), [0.0, 0])
        s[0] += y
        s[1] += 1
    return np.array([sums[(c, g, int(a))][0] / sums[(c, g, int(a))][1] for c, g, a in zip(country, gender, age)])
