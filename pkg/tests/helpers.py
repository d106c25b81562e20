"""Small builders shared by the test modules."""
from __future__ import annotations

import numpy as np

from geemort.dataio import MortalityRecord
from geemort.design import DesignMatrix
from geemort.simulate import correlated_noise


def raw_design(X, y, w=None, clusters=None, waves=None, names=None) -> DesignMatrix:
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    return DesignMatrix(
        X=X,
        y=np.asarray(y, dtype=float),
        w=np.ones(n) if w is None else np.asarray(w, dtype=float),
        cluster_ids=list(range(n)) if clusters is None else list(clusters),
        waves=np.zeros(n, dtype=np.int64) if waves is None else np.asarray(waves, dtype=np.int64),
        column_names=names or [f"x{j}" for j in range(p)],
    )


def random_panel_design(rng, n_clusters, n_waves, p, rho=0.0, kind="independence", weighted=True, sd=1.0):
    """Intercept plus ``p - 1`` standard-normal covariates, balanced panel."""
    n = n_clusters * n_waves
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    beta = rng.uniform(-2, 2, size=p)
    noise = correlated_noise(rng, n_clusters, n_waves, rho, kind, sd).reshape(-1)
    w = rng.uniform(0.5, 2.0, size=n) if weighted else np.ones(n)
    y = X @ beta + noise / np.sqrt(w)
    clusters = np.repeat(np.arange(n_clusters), n_waves)
    waves = np.tile(np.arange(n_waves), n_clusters)
    return raw_design(X, y, w, clusters, waves)


def grid_records(countries=("CZE",), genders=("m",), ages=(20, 21), years=(1991, 1992, 1993), rate=None, exposure=1000.0):
    """Balanced long-format records; ``rate(c, g, age, year)`` defaults to a smooth surface."""
    if rate is None:
        def rate(c, g, a, t):
            return float(np.exp(-9.0 + 0.09 * a - 0.01 * (t - 1991)))
    return [
        MortalityRecord(c, g, int(t), int(a), rate(c, g, a, t), exposure)
        for c in countries for g in genders for a in ages for t in years
    ]
