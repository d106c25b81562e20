"""Random-walk-with-drift extrapolation of k_t and interval forecasts."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .design import DesignMatrix, KtSeries
from .errors import ColumnMismatch, TooShort
from .gee import GeeFit

Z95 = 1.959964
INTERVAL_MODES = ("mean", "prediction", "prediction+kt")
COV_SOURCES = ("max", "robust", "naive")
FORECAST_HEADER = (
    "country", "gender", "age", "year",
    "log_point", "log_lo95", "log_hi95", "rate_point", "rate_lo95", "rate_hi95",
)


@dataclass(frozen=True)
class RwDriftModel:
    drift: float
    sigma: float
    last_value: float
    last_year: int
    n_train: int

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.n_train < 2:
            raise TooShort("random walk needs at least two training years")


def fit_rw_drift(kt: KtSeries) -> RwDriftModel:
    """Drift is the mean first difference ``(k_T - k_0) / T``; sigma is the
    sample standard deviation of the first differences."""
    k = np.asarray(kt.values, dtype=float)
    if len(k) < 2:
        raise TooShort(f"{len(k)} training years; need at least 2")
    diffs = np.diff(k)
    drift = (k[-1] - k[0]) / len(diffs)
    if len(diffs) > 1:
        sigma = math.sqrt(float(np.sum((diffs - drift) ** 2)) / (len(diffs) - 1))
    else:
        sigma = 0.0
    return RwDriftModel(float(drift), sigma, float(k[-1]), int(kt.years[-1]), len(k))


def forecast_kt(model: RwDriftModel, horizon: int, drift_uncertainty: bool = False) -> KtSeries:
    """Point path ``k_T + s * drift`` and step variance ``s * sigma^2``.

    With ``drift_uncertainty`` the variance gains ``s^2 sigma^2 / n_diff``
    from estimating the drift.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    s = np.arange(1, horizon + 1, dtype=float)
    var = s * model.sigma ** 2
    if drift_uncertainty:
        var = var + s ** 2 * model.sigma ** 2 / (model.n_train - 1)
    return KtSeries(
        years=model.last_year + np.arange(1, horizon + 1),
        values=model.last_value + s * model.drift,
        variance=var,
    )


def z_value(level: float) -> float:
    if not 0.0 <= level < 1.0:
        raise ValueError("level must lie in [0, 1)")
    if level == 0.95:
        return Z95
    return float(ndtri(0.5 + level / 2.0))


@dataclass
class ForecastTable:
    country: np.ndarray
    gender: np.ndarray
    age: np.ndarray
    year: np.ndarray
    log_point: np.ndarray
    log_lo: np.ndarray
    log_hi: np.ndarray

    def __len__(self):
        return len(self.year)

    @property
    def rate_point(self):
        return np.exp(self.log_point)

    @property
    def rate_lo(self):
        return np.exp(self.log_lo)

    @property
    def rate_hi(self):
        return np.exp(self.log_hi)

    def rows(self):
        rp, rl, rh = self.rate_point, self.rate_lo, self.rate_hi
        for i in range(len(self)):
            yield (
                self.country[i], self.gender[i], int(self.age[i]), int(self.year[i]),
                self.log_point[i], self.log_lo[i], self.log_hi[i], rp[i], rl[i], rh[i],
            )

    def write_csv(self, path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="") as handle:
            w = csv.writer(handle, lineterminator="\n")
            w.writerow(FORECAST_HEADER)
            for row in self.rows():
                w.writerow(list(row[:4]) + [format(float(v), ".17g") for v in row[4:]])


def kt_derivative(fit: GeeFit, design: DesignMatrix) -> np.ndarray:
    """Per-row d(yhat)/d(k_t) = b + 2 c k_t for the row's population-age block."""
    kinds = np.asarray(design.term_kind)
    cblock = np.asarray(design.column_block)
    nb = len(design.blocks)
    b = np.zeros(nb)
    c = np.zeros(nb)
    b[cblock[kinds == "kt"]] = fit.beta[kinds == "kt"]
    c[cblock[kinds == "kt2"]] = fit.beta[kinds == "kt2"]
    rb = np.asarray(design.row_block)
    return b[rb] + 2.0 * c[rb] * np.asarray(design.kt)


def predict(
    fit: GeeFit,
    X_future: DesignMatrix,
    kt_var=None,
    level: float = 0.95,
    mode: str = "prediction",
    cov: str = "max",
) -> ForecastTable:
    """Point forecasts on the log scale with symmetric normal intervals.

    ``mean`` uses the variance of the fitted mean only, ``prediction`` adds
    the residual variance ``phi / w``, and ``prediction+kt`` further adds the
    propagated k_t forecast variance (``kt_var`` per row, defaulting to
    ``X_future.kt_variance``).

    ``cov`` picks the coefficient covariance behind the mean variance:
    ``robust`` (sandwich), ``naive`` (model-based) or ``max``, the larger
    of the two per row. The sandwich carries no information on coefficients
    that belong to a single cluster (their score is identically zero at the
    solution), so with the per-series slopes of the mortality models it
    understates extrapolation variance; ``max`` guards against that while
    keeping the robust value wherever it is larger.
    """
    if mode not in INTERVAL_MODES:
        raise ValueError(f"mode must be one of {INTERVAL_MODES}")
    if cov not in COV_SOURCES:
        raise ValueError(f"cov must be one of {COV_SOURCES}")
    if list(X_future.column_names) != list(fit.column_names):
        raise ColumnMismatch("future design columns differ from the fitted model")
    X = np.asarray(X_future.X, dtype=float)
    point = X @ fit.beta
    if cov == "naive":
        var = np.einsum("ij,jk,ik->i", X, fit.V_naive, X)
    else:
        var = np.einsum("ij,jk,ik->i", X, fit.V_robust, X)
        if cov == "max":
            var = np.maximum(var, np.einsum("ij,jk,ik->i", X, fit.V_naive, X))
    if mode != "mean":
        var = var + fit.phi / np.asarray(X_future.w, dtype=float)
    if mode == "prediction+kt":
        if kt_var is None:
            kt_var = X_future.kt_variance
        if kt_var is None:
            raise ValueError("prediction+kt needs a k_t forecast variance")
        var = var + kt_derivative(fit, X_future) ** 2 * np.asarray(kt_var, dtype=float)
    half = z_value(level) * np.sqrt(np.clip(var, 0.0, None))
    return ForecastTable(
        country=np.asarray(X_future.country, dtype=object),
        gender=np.asarray(X_future.gender, dtype=object),
        age=np.asarray(X_future.age),
        year=np.asarray(X_future.waves),
        log_point=point,
        log_lo=point - half,
        log_hi=point + half,
    )


def write_kt_csv(history: KtSeries, forecast: KtSeries | None, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        w = csv.writer(handle, lineterminator="\n")
        w.writerow(("year", "kt", "kind", "variance"))
        for t, v in zip(history.years, history.values):
            w.writerow((int(t), format(float(v), ".17g"), "observed", "0"))
        if forecast is not None:
            var = forecast.variance if forecast.variance is not None else np.zeros(len(forecast))
            for t, v, s2 in zip(forecast.years, forecast.values, var):
                w.writerow((int(t), format(float(v), ".17g"), "forecast", format(float(s2), ".17g")))
