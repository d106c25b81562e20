"""Synthetic Lee-Carter-style log death rates with within-cluster correlation.

    y_cgxt = a_x + a_cg + b_x kappa_t + eps_cgxt

``kappa`` is a random walk with drift; ``eps`` is correlated within each
(country, gender, age) series across years, exchangeable or AR(1).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import MortalityRecord


@dataclass
class SimulatedPanel:
    records: list[MortalityRecord]
    kappa: np.ndarray
    # (cluster, year) arrays; clusters ordered as ``cells``
    mean: np.ndarray
    noise: np.ndarray
    cells: list
    years: np.ndarray


def correlated_noise(rng, n_clusters, n_waves, rho, kind, sd):
    if kind == "ar1":
        e = np.empty((n_clusters, n_waves))
        e[:, 0] = rng.standard_normal(n_clusters)
        innov = np.sqrt(1.0 - rho * rho)
        for j in range(1, n_waves):
            e[:, j] = rho * e[:, j - 1] + innov * rng.standard_normal(n_clusters)
        return sd * e
    if kind == "exchangeable":
        if rho < 0:
            raise ValueError("exchangeable simulation needs rho >= 0")
        shared = rng.standard_normal((n_clusters, 1))
        own = rng.standard_normal((n_clusters, n_waves))
        return sd * (np.sqrt(rho) * shared + np.sqrt(1.0 - rho) * own)
    if kind == "independence":
        return sd * rng.standard_normal((n_clusters, n_waves))
    raise ValueError(f"unknown correlation kind {kind!r}")


def simulate_panel(
    seed: int,
    countries=("AAA",),
    genders=("m",),
    ages=range(20, 81),
    years=range(1991, 2011),
    rho: float = 0.5,
    kind: str = "exchangeable",
    noise_sd: float = 0.05,
    drift: float = -0.015,
    kappa_sd: float = 0.006,
) -> SimulatedPanel:
    rng = np.random.default_rng(seed)
    ages = np.asarray(list(ages), dtype=np.int64)
    years = np.asarray(list(years), dtype=np.int64)
    kappa = np.concatenate([[0.0], np.cumsum(drift + kappa_sd * rng.standard_normal(len(years) - 1))])
    a_x = -9.5 + 0.09 * ages
    b_x = 1.4 - 0.012 * (ages - ages.min())
    b_x = b_x / b_x.mean()
    cells, mean_rows = [], []
    for ci, c in enumerate(countries):
        for gi, g in enumerate(genders):
            offset = 0.15 * ci - 0.5 * gi
            for k, x in enumerate(ages):
                cells.append((c, g, int(x)))
                mean_rows.append(a_x[k] + offset + b_x[k] * kappa)
    mean = np.asarray(mean_rows)
    noise = correlated_noise(rng, len(cells), len(years), rho, kind, noise_sd)
    y = mean + noise
    records = []
    for i, (c, g, x) in enumerate(cells):
        exposure = 1.0e5 * np.exp(-0.02 * (x - 20))
        for j, t in enumerate(years):
            records.append(MortalityRecord(c, g, int(t), x, float(np.exp(y[i, j])), float(exposure)))
    return SimulatedPanel(records, kappa, mean, noise, cells, years)
