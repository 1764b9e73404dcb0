"""Reference methods: closed-form CCA, FastICA, and ICA with marginal matching.

CCA covers the aligned setting (needs paired rows); the ICA pipeline covers
the unaligned setting under the much stronger requirement that every latent
coordinate is mutually independent. Both serve as comparison points for the
distribution-matching solver and as the per-coordinate disentangling step on
its recovered shared components.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import ks_2samp

from .numerics import (ValidationError, check_matrix, empirical_covariance,
                       sym_eig, whitening_matrix)


@dataclass
class CcaResult:
    """Projections satisfying the per-view whitening constraints, plus the
    canonical correlations in descending order."""

    q1: np.ndarray
    q2: np.ndarray
    correlations: np.ndarray


@dataclass
class IcaResult:
    unmixing: np.ndarray      # k x d, maps centered data to sources
    sources: np.ndarray       # n x k, unit empirical variance
    converged: bool
    n_iter: int


def cca_fit(x1: np.ndarray, x2: np.ndarray, d_c: int) -> CcaResult:
    """Canonical correlation analysis on row-aligned views.

    Whitens each view, SVDs the whitened cross-covariance, and keeps the top
    d_c directions. The sample-count precondition is checked against the
    numerical ranks r_q of the two covariances via N >= r1 + r2 - d_c, which
    under the latent model equals the shared-plus-private dimension count.
    """
    x1 = check_matrix(x1, "X1")
    x2 = check_matrix(x2, "X2")
    n = x1.shape[0]
    if x2.shape[0] != n:
        raise ValidationError("aligned views must have equal row counts")
    x1 = x1 - x1.mean(axis=0)
    x2 = x2 - x2.mean(axis=0)
    s1 = empirical_covariance(x1, center=False)
    s2 = empirical_covariance(x2, center=False)
    w1 = whitening_matrix(s1)
    w2 = whitening_matrix(s2)
    r1, r2 = w1.shape[0], w2.shape[0]
    if r1 < d_c or r2 < d_c:
        raise ValidationError(
            f"covariance rank ({r1}, {r2}) below requested d_c={d_c}")
    if n < r1 + r2 - d_c:
        raise ValidationError(
            f"insufficient aligned samples: N={n} < {r1 + r2 - d_c} "
            "(shared + private dimensions)")
    cross = (w1 @ x1.T) @ (x2 @ w2.T) / n
    u, s, vt = np.linalg.svd(cross)
    q1 = u[:, :d_c].T @ w1
    q2 = vt[:d_c] @ w2
    return CcaResult(q1=q1, q2=q2, correlations=np.clip(s[:d_c], 0.0, None))


def fastica(x: np.ndarray, k: int, rng: np.random.Generator,
            max_iter: int = 500, tol: float = 1e-7) -> IcaResult:
    """Symmetric FastICA with tanh nonlinearity on whitened data.

    Deterministic given rng; sets converged=False if the fixed point is not
    reached within max_iter sweeps (e.g. on Gaussian input). Sources come out
    with unit empirical variance (1/N convention).
    """
    x = check_matrix(x, "X")
    n = x.shape[0]
    if n < 10 * k:
        raise ValidationError(f"need at least {10 * k} rows for k={k} components")
    x = x - x.mean(axis=0)
    white = whitening_matrix(empirical_covariance(x, center=False))
    if white.shape[0] < k:
        raise ValidationError(
            f"whitening failure: rank {white.shape[0]} < k={k}")
    white = white[:k]
    xw = x @ white.T

    w = rng.normal(size=(k, k))
    w = _sym_decorrelate(w)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        wx = xw @ w.T
        g = np.tanh(wx)
        g_prime = 1.0 - g * g
        w_new = (g.T @ xw) / n - g_prime.mean(axis=0)[:, None] * w
        w_new = _sym_decorrelate(w_new)
        delta = float(np.max(np.abs(np.abs(np.einsum("ij,ij->i", w_new, w)) - 1.0)))
        w = w_new
        if delta < tol:
            converged = True
            break
    sources = xw @ w.T
    return IcaResult(unmixing=w @ white, sources=sources,
                     converged=converged, n_iter=it)


def _sym_decorrelate(w: np.ndarray) -> np.ndarray:
    """W <- (W W^T)^{-1/2} W, keeping rows orthonormal."""
    evals, evecs = sym_eig(w @ w.T)
    if np.min(evals) <= 0:
        raise ValidationError("degenerate unmixing matrix during decorrelation")
    inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.T
    return inv_sqrt @ w


@dataclass
class IcaMatchResult:
    pairs: list                 # [(i, j), ...] matched component indices
    signs: np.ndarray           # sign applied to view-2 sources per match
    c1: np.ndarray              # n1 x d_c matched sources from view 1
    c2: np.ndarray              # n2 x d_c matched sources from view 2 (sign-aligned)
    ica1: IcaResult
    ica2: IcaResult
    costs: np.ndarray           # KS statistic per matched pair


def ica_match(x1: np.ndarray, x2: np.ndarray, d_c: int,
              rng: np.random.Generator) -> IcaMatchResult:
    """ICA per view followed by cross-view matching of source marginals.

    Runs FastICA with as many components as each covariance supports, scores
    every cross pair by the two-sample Kolmogorov-Smirnov statistic (also
    under a sign flip), solves a minimum-cost assignment, and keeps the d_c
    cheapest non-repeating pairs. Valid only when all latent coordinates are
    mutually independent; on other data it still returns its best effort.
    """
    x1 = check_matrix(x1, "X1")
    x2 = check_matrix(x2, "X2")
    if d_c == 0:
        return IcaMatchResult(pairs=[], signs=np.zeros(0), c1=np.zeros((x1.shape[0], 0)),
                              c2=np.zeros((x2.shape[0], 0)), ica1=None, ica2=None,
                              costs=np.zeros(0))
    k1 = _full_rank(x1)
    k2 = _full_rank(x2)
    if k1 < d_c or k2 < d_c:
        raise ValidationError(
            f"fewer than d_c={d_c} components recoverable ({k1}, {k2})")
    ica1 = fastica(x1, k1, rng)
    ica2 = fastica(x2, k2, rng)

    cost = np.zeros((k1, k2))
    flip = np.zeros((k1, k2))
    for i in range(k1):
        si = ica1.sources[:, i]
        for j in range(k2):
            sj = ica2.sources[:, j]
            d_plus = ks_2samp(si, sj).statistic
            d_minus = ks_2samp(si, -sj).statistic
            if d_minus < d_plus:
                cost[i, j] = d_minus
                flip[i, j] = -1.0
            else:
                cost[i, j] = d_plus
                flip[i, j] = 1.0
    rows, cols = linear_sum_assignment(cost)
    order = np.argsort(cost[rows, cols])[:d_c]
    pairs = [(int(rows[o]), int(cols[o])) for o in order]
    signs = np.array([flip[i, j] for i, j in pairs])
    c1 = ica1.sources[:, [i for i, _ in pairs]]
    c2 = ica2.sources[:, [j for _, j in pairs]] * signs
    return IcaMatchResult(pairs=pairs, signs=signs, c1=c1, c2=c2,
                          ica1=ica1, ica2=ica2,
                          costs=np.array([cost[i, j] for i, j in pairs]))


def _full_rank(x: np.ndarray) -> int:
    s = empirical_covariance(x, center=True)
    evals, _ = sym_eig(s)
    return int(np.sum(evals > 1e-10 * max(evals[0], 1e-300)))
