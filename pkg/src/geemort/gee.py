"""Gaussian generalized estimating equations with prior weights.

Identity link, unit variance function. Prior weights are variance weights,
so the working covariance of cluster ``i`` is
``phi * W_i^{-1/2} R_i W_i^{-1/2}``. The estimating equations are solved by
alternating moment updates of ``(phi, R)`` with a generalized least-squares
update of ``beta``, starting from the weighted least-squares fit.

Naive covariance is ``phi * B^{-1}``; the robust (sandwich) covariance is
``B^{-1} M B^{-1}`` with ``M`` the sum of outer products of cluster scores.
"""
from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr, solve_triangular

from .design import DesignMatrix
from .errors import (
    DimensionExceeded,
    InsufficientPairs,
    NoConvergence,
    NotPositiveDefinite,
    Singular,
    UnbalancedForUnstructured,
)

KINDS = ("independence", "exchangeable", "ar1", "unstructured")
PIVOT_TOL = 1e-10
PHI_FLOOR = 1e-12
RHO_MARGIN = 1e-6


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class WorkingCorrelation:
    kind: str
    params: object = None
    n_max: int = 1
    # common wave set, unstructured only
    waves: tuple | None = None

    @property
    def rho(self):
        if self.kind in ("exchangeable", "ar1"):
            return float(self.params)
        if self.kind == "unstructured":
            return np.asarray(self.params)
        return None


def _check_pd(R, what):
    try:
        np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(f"{what} is not positive definite") from None


def materialize(corr: WorkingCorrelation, n: int) -> np.ndarray:
    """The ``n x n`` working correlation matrix for consecutive waves."""
    if corr.kind == "independence":
        return np.eye(n)
    if corr.kind == "exchangeable":
        rho = float(corr.params)
        lo = -1.0 / (corr.n_max - 1) if corr.n_max > 1 else -np.inf
        if not lo < rho < 1.0:
            raise NotPositiveDefinite(f"exchangeable rho={rho} outside ({lo}, 1)")
        R = np.full((n, n), rho)
        np.fill_diagonal(R, 1.0)
        return R
    if corr.kind == "ar1":
        rho = float(corr.params)
        if not abs(rho) < 1.0:
            raise NotPositiveDefinite(f"ar1 rho={rho} outside (-1, 1)")
        idx = np.arange(n)
        return np.power(rho, np.abs(idx[:, None] - idx[None, :]).astype(float))
    if corr.kind == "unstructured":
        P = np.asarray(corr.params, dtype=float)
        if n > P.shape[0]:
            raise DimensionExceeded(f"cluster size {n} exceeds unstructured dimension {P.shape[0]}")
        R = P[:n, :n].copy()
        if not np.allclose(R, R.T, rtol=0, atol=0) or not np.all(np.diag(R) == 1.0):
            raise NotPositiveDefinite("unstructured matrix must be symmetric with unit diagonal")
        _check_pd(R, "unstructured working correlation")
        return R
    raise ValueError(f"unknown correlation kind {corr.kind!r}")


def _cluster_matrix(corr: WorkingCorrelation, waves) -> np.ndarray:
    waves = np.asarray(waves)
    n = len(waves)
    if corr.kind == "ar1":
        rho = float(corr.params)
        if not abs(rho) < 1.0:
            raise NotPositiveDefinite(f"ar1 rho={rho} outside (-1, 1)")
        return np.power(rho, np.abs(waves[:, None] - waves[None, :]).astype(float))
    if corr.kind == "unstructured" and corr.waves is not None:
        pos = {w: i for i, w in enumerate(corr.waves)}
        try:
            sel = [pos[int(w)] for w in waves]
        except KeyError:
            raise UnbalancedForUnstructured(f"wave set {tuple(waves)} differs from {corr.waves}") from None
        R = np.asarray(corr.params, dtype=float)[np.ix_(sel, sel)]
        _check_pd(R, "unstructured working correlation")
        return R
    return materialize(corr, n)


def estimate_corr_params(clusters, kind: str, phi: float, p: int) -> WorkingCorrelation:
    """Moment estimates of the working-correlation parameters.

    ``clusters`` is a sequence of ``(waves, pearson_residuals)`` pairs. The
    estimates divide by ``phi * (pairs - p)``; pass ``p=0`` to drop the
    degrees-of-freedom correction. Scalar estimates are clamped into the
    positive-definite region with a margin of ``1e-6``.
    """
    clusters = [(np.asarray(w, dtype=np.int64), np.asarray(r, dtype=float)) for w, r in clusters]
    n_max = max((len(r) for _, r in clusters), default=1)
    if kind == "independence":
        return WorkingCorrelation("independence", None, n_max)
    if phi <= 0:
        raise ValueError("phi must be positive")

    if kind == "exchangeable":
        num = 0.0
        npairs = 0
        for _, r in clusters:
            s = r.sum()
            num += 0.5 * (s * s - np.dot(r, r))
            npairs += len(r) * (len(r) - 1) // 2
        if npairs == 0:
            return WorkingCorrelation("exchangeable", 0.0, n_max)
        denom = phi * (npairs - p)
        if denom <= 0:
            raise InsufficientPairs(f"{npairs} within-cluster pairs for {p} parameters")
        lo = -1.0 / (n_max - 1) + RHO_MARGIN
        rho = min(max(num / denom, lo), 1.0 - RHO_MARGIN)
        return WorkingCorrelation("exchangeable", float(rho), n_max)

    if kind == "ar1":
        num = 0.0
        npairs = 0
        for w, r in clusters:
            adj = np.diff(w) == 1
            num += float(np.dot(r[:-1][adj], r[1:][adj]))
            npairs += int(adj.sum())
        if npairs == 0:
            return WorkingCorrelation("ar1", 0.0, n_max)
        denom = phi * (npairs - p)
        if denom <= 0:
            raise InsufficientPairs(f"{npairs} adjacent-wave pairs for {p} parameters")
        rho = min(max(num / denom, -1.0 + RHO_MARGIN), 1.0 - RHO_MARGIN)
        return WorkingCorrelation("ar1", float(rho), n_max)

    if kind == "unstructured":
        waves = tuple(clusters[0][0].tolist())
        for w, _ in clusters:
            if tuple(w.tolist()) != waves:
                raise UnbalancedForUnstructured("unstructured correlation needs every cluster to share one wave set")
        n = len(waves)
        Rmat = np.stack([r for _, r in clusters])
        denom = phi * (len(clusters) - p)
        if n > 1 and denom <= 0:
            raise InsufficientPairs(f"{len(clusters)} clusters per wave pair for {p} parameters")
        P = np.eye(n)
        if n > 1:
            S = (Rmat.T @ Rmat) / denom
            P = np.clip(S, -1.0 + RHO_MARGIN, 1.0 - RHO_MARGIN)
            P = 0.5 * (P + P.T)
            np.fill_diagonal(P, 1.0)
        return WorkingCorrelation("unstructured", P, n, waves)

    raise ValueError(f"unknown correlation kind {kind!r}")


@dataclass(frozen=True, eq=False)
class GeeFit:
    beta: np.ndarray
    phi: float
    corr: WorkingCorrelation
    V_naive: np.ndarray
    V_robust: np.ndarray
    residuals: np.ndarray
    iterations: int
    converged: bool
    quasi_lik: float
    kind: str
    column_names: list
    n_obs: int
    n_clusters: int
    fitted: np.ndarray
    design_key: str
    phi_floored: bool = False
    # B^-1 = U U' with U = diag(d) P R^-1; stored as (R, perm, d) for accurate traces
    info_root: tuple | None = field(default=None, repr=False)
    # R^-T P' M P R^-1, the sandwich meat in the same coordinates
    score_cov: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_params(self):
        return len(self.beta)

    @property
    def se_naive(self):
        return np.sqrt(np.clip(np.diag(self.V_naive), 0, None))

    @property
    def se_robust(self):
        return np.sqrt(np.clip(np.diag(self.V_robust), 0, None))

    @property
    def rho(self):
        return self.corr.rho


def design_fingerprint(design: DesignMatrix) -> str:
    h = hashlib.sha1()
    h.update("\x1f".join(design.column_names).encode())
    for a in (design.X, design.y, design.w):
        h.update(np.ascontiguousarray(a, dtype=float).tobytes())
    return h.hexdigest()


def _pivoted_lstsq(Z, z):
    """Least squares ``Z x = z`` by column-pivoted QR.

    Columns are scaled to unit norm first, so each squared pivot is the
    fraction of a column left unexplained by the columns pivoted before it;
    these equal the pivots of a Cholesky factorization of ``Z'Z`` scaled to
    unit diagonal. Returns ``x``, ``(Z'Z)^{-1}`` and the factor
    ``(R, perm, norms)`` with ``(Z / norms)[:, perm] = Q R``.
    """
    p = Z.shape[1]
    norms = np.sqrt(np.einsum("ij,ij->j", Z, Z))
    if np.any(norms == 0):
        raise Singular("design has an all-zero column")
    Q, R, perm = qr(Z / norms, mode="economic", pivoting=True)
    pivots = np.diag(R) ** 2
    rank = int(np.sum(pivots >= PIVOT_TOL))
    if rank < p or not np.all(np.isfinite(pivots)):
        raise Singular(f"information matrix has numerical rank {rank} < {p} at pivot tolerance {PIVOT_TOL:g}")
    x = np.empty(p)
    x[perm] = solve_triangular(R, Q.T @ z, lower=False)
    Rinv = solve_triangular(R, np.eye(p), lower=False)
    inv = np.empty((p, p))
    inv[np.ix_(perm, perm)] = Rinv @ Rinv.T
    inv = inv / norms[:, None] / norms[None, :]
    return x / norms, 0.5 * (inv + inv.T), (R, perm, norms)


class _Layout:
    """Canonical (cluster, wave) row order and clusters grouped by wave set."""

    def __init__(self, design: DesignMatrix):
        ids = design.cluster_ids
        uniq = sorted(set(ids))
        code = {c: i for i, c in enumerate(uniq)}
        codes = np.array([code[c] for c in ids], dtype=np.int64)
        waves = np.asarray(design.waves, dtype=np.int64)
        self.order = np.lexsort((waves, codes))
        codes = codes[self.order]
        waves = waves[self.order]
        starts = np.flatnonzero(np.r_[True, codes[1:] != codes[:-1]])
        ends = np.r_[starts[1:], len(codes)]
        self.n_clusters = len(starts)
        self.slices = list(zip(starts.tolist(), ends.tolist()))
        self.cluster_waves = [waves[s:e] for s, e in self.slices]
        for w in self.cluster_waves:
            if np.any(np.diff(w) <= 0):
                raise ValueError("duplicate wave within a cluster")
        groups: dict[tuple, list] = {}
        for (s, e), w in zip(self.slices, self.cluster_waves):
            groups.setdefault(tuple(w.tolist()), []).append(np.arange(s, e))
        self.groups = [(np.asarray(k, dtype=np.int64), np.stack(v)) for k, v in groups.items()]
        self.n_max = max(len(k) for k, _ in self.groups)

    def clusters(self, r):
        return [(w, r[s:e]) for (s, e), w in zip(self.slices, self.cluster_waves)]


def _null_corr(kind, layout) -> WorkingCorrelation:
    # degenerate dispersion: correlation is unidentified, fall back to zero
    if kind == "independence":
        return WorkingCorrelation(kind, None, layout.n_max)
    if kind == "unstructured":
        if len(layout.groups) > 1:
            raise UnbalancedForUnstructured("unstructured correlation needs every cluster to share one wave set")
        waves = tuple(layout.groups[0][0].tolist())
        return WorkingCorrelation(kind, np.eye(len(waves)), len(waves), waves)
    return WorkingCorrelation(kind, 0.0, layout.n_max)


def _whitener(corr, waves):
    """``L^{-1}`` for the Cholesky factor ``L`` of the cluster's working correlation."""
    R = _cluster_matrix(corr, waves)
    try:
        L = np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(f"{corr.kind} working correlation is not positive definite") from None
    return solve_triangular(L, np.eye(len(waves)), lower=True)


def _whiten(layout, corr, Xs, ys):
    """Per wave-set group: ``(idx, L^{-1}, L^{-1} X_i, L^{-1} y_i)``."""
    blocks = []
    for waves, idx in layout.groups:
        A, b = Xs[idx], ys[idx]
        Linv = None
        if corr.kind != "independence":
            Linv = _whitener(corr, waves)
            A = np.matmul(Linv, A)
            b = b @ Linv.T
        blocks.append((idx, Linv, A, b))
    return blocks


def _gls(blocks, p):
    Z = np.concatenate([A.reshape(-1, p) for _, _, A, _ in blocks])
    z = np.concatenate([b.reshape(-1) for _, _, _, b in blocks])
    return _pivoted_lstsq(Z, z)


def _meat(blocks, rs, p):
    """Sum over clusters of ``s_i s_i'`` with score ``s_i = X_i' R_i^{-1} r_i``."""
    M = np.zeros((p, p))
    for idx, Linv, A, _ in blocks:
        rw = rs[idx] if Linv is None else rs[idx] @ Linv.T
        scores = np.einsum("mnp,mn->mp", A, rw)
        M += scores.T @ scores
    return 0.5 * (M + M.T)


def fit(
    design: DesignMatrix,
    kind: str = "exchangeable",
    tol: float = 1e-8,
    max_iter: int = 50,
    corr_ddof: str = "params",
    strict: bool = False,
) -> GeeFit:
    """Fit the Gaussian GEE by alternating moment and GLS updates.

    Parameters
    ----------
    design : DesignMatrix
    kind : {"independence", "exchangeable", "ar1", "unstructured"}
    tol : float
        Convergence when the largest absolute coefficient change is below it.
    max_iter : int
    corr_ddof : {"params", "none"}
        Whether the correlation moment estimators subtract the number of
        coefficients from their pair counts.
    strict : bool
        Raise :class:`NoConvergence` instead of returning an unconverged fit.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown correlation kind {kind!r}")
    if corr_ddof not in ("params", "none"):
        raise ValueError("corr_ddof must be 'params' or 'none'")
    X = np.asarray(design.X, dtype=float)
    N, p = X.shape
    if N <= p:
        raise Singular(f"{N} observations for {p} coefficients")
    w = np.asarray(design.w, dtype=float)
    if not np.all(w > 0):
        raise ValueError("prior weights must be positive")
    layout = _Layout(design)
    o = layout.order
    Xo, yo, wo = X[o], np.asarray(design.y, dtype=float)[o], w[o]
    sw = np.sqrt(wo)
    scale = np.max(np.abs(Xo), axis=0)
    scale[scale == 0] = 1.0
    Xs = (Xo * sw[:, None]) / scale
    ys = yo * sw
    ddof = p if corr_ddof == "params" else 0

    def solve(corr):
        blocks = _whiten(layout, corr, Xs, ys)
        bs, Binv_s, factor = _gls(blocks, p)
        return blocks, Binv_s, bs / scale, factor

    def moments(beta):
        r = sw * (yo - Xo @ beta)
        phi = float(np.dot(r, r)) / (N - p)
        if phi < PHI_FLOOR:
            return r, PHI_FLOOR, _null_corr(kind, layout), True
        corr = estimate_corr_params(layout.clusters(r), kind, phi, ddof)
        return r, phi, corr, False

    indep = WorkingCorrelation("independence", None, layout.n_max)
    _, _, beta, _ = solve(indep)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        _, _, corr, _ = moments(beta)
        _, _, beta_new, _ = solve(corr)
        delta = float(np.max(np.abs(beta_new - beta))) if p else 0.0
        beta = beta_new
        if delta < tol:
            converged = True
            break
    if not converged:
        msg = f"{kind} GEE did not converge in {max_iter} iterations"
        if strict:
            raise NoConvergence(msg)
        warnings.warn(msg, ConvergenceWarning, stacklevel=2)

    r, phi, corr, floored = moments(beta)
    blocks, Binv_s, _, (Rf, perm, norms) = solve(corr)
    M_s = _meat(blocks, r, p)
    # meat in the pivoted, triangular coordinates: R^-T P' M_n P R^-1
    Mn = M_s / norms[:, None] / norms[None, :]
    T = solve_triangular(Rf, Mn[np.ix_(perm, perm)], trans="T", lower=False)
    S = solve_triangular(Rf, T.T, trans="T", lower=False)
    Dinv = 1.0 / scale
    Binv = Binv_s * Dinv[:, None] * Dinv[None, :]
    V_naive = phi * Binv
    V_naive = 0.5 * (V_naive + V_naive.T)
    V_robust = (Binv_s @ M_s @ Binv_s) * Dinv[:, None] * Dinv[None, :]
    V_robust = 0.5 * (V_robust + V_robust.T)

    resid = np.empty(N)
    resid[o] = r
    fitted = X @ beta
    return GeeFit(
        beta=beta,
        phi=phi,
        corr=corr,
        V_naive=V_naive,
        V_robust=V_robust,
        residuals=resid,
        iterations=it,
        converged=converged,
        quasi_lik=-float(np.dot(r, r)) / (2.0 * phi),
        kind=kind,
        column_names=list(design.column_names),
        n_obs=N,
        n_clusters=layout.n_clusters,
        fitted=fitted,
        design_key=design_fingerprint(design),
        phi_floored=floored,
        info_root=(Rf, perm, 1.0 / (scale * norms)),
        score_cov=0.5 * (S + S.T),
    )
