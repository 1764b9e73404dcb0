"""Dense linear algebra, seeded randomness, Adam, and a finite-difference oracle.

Everything downstream (data generation, matchers, solvers, baselines) builds on
the helpers here. Matrices are plain float64 numpy arrays, rows = samples.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np


class ValidationError(ValueError):
    """Input violates a documented precondition (shape, symmetry, finiteness)."""


class DegenerateCovarianceError(ValidationError):
    """Covariance has no retained spectrum above the rank threshold."""


def check_finite(a: np.ndarray, name: str = "array") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} contains NaN or Inf entries")
    return a


def check_matrix(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    a = check_finite(a, name)
    if a.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {a.shape}")
    return a


# ---------------------------------------------------------------------------
# Seeded randomness with named substreams
# ---------------------------------------------------------------------------

def substream(seed: int, module: str, purpose: str = "") -> np.random.Generator:
    """Return a PCG64 generator for the (module, purpose) substream of `seed`.

    Substreams are derived by mixing CRC32 digests of the labels into a
    SeedSequence, so the same (seed, module, purpose) triple yields a
    bit-identical stream on every run while distinct labels decorrelate.
    """
    key = zlib.crc32(f"{module}/{purpose}".encode("utf-8"))
    ss = np.random.SeedSequence(entropy=[int(seed) & 0xFFFFFFFFFFFFFFFF, key])
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------------
# Covariance, eigendecomposition, whitening
# ---------------------------------------------------------------------------

def empirical_covariance(X: np.ndarray, center: bool = True) -> np.ndarray:
    """(1/N) X~^T X~ with X~ column-centered iff `center`.

    Uses the 1/N convention throughout the package so that whitening of an
    exactly-centered matrix satisfies W S W^T = I without ddof bookkeeping.
    """
    X = check_matrix(X, "X")
    n = X.shape[0]
    if n < 2:
        raise ValidationError(f"covariance needs at least 2 rows, got {n}")
    if center:
        X = X - X.mean(axis=0)
    S = (X.T @ X) / n
    return 0.5 * (S + S.T)


def sym_eig(S: np.ndarray, tol: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix, eigenvalues sorted descending.

    Returns (eigenvalues, eigenvectors) with eigenvectors in columns, so that
    S = V diag(w) V^T up to round-off.
    """
    S = check_matrix(S, "S")
    if S.shape[0] != S.shape[1]:
        raise ValidationError(f"S must be square, got shape {S.shape}")
    scale = np.linalg.norm(S)
    if np.linalg.norm(S - S.T) > tol * max(scale, 1e-300):
        raise ValidationError("S is not symmetric within tolerance")
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    order = np.argsort(w)[::-1]
    return w[order], V[:, order]


def whitening_matrix(S: np.ndarray, rank_tol: float = 1e-10) -> np.ndarray:
    """Spectral whitening W = L_r^{-1/2} V_r^T over the retained spectrum.

    Eigenvalues below rank_tol * lambda_max are truncated, so W has one row
    per retained direction and W S W^T = I on that subspace. For an exactly
    diagonal S the eigenbasis is fixed to the coordinate axes in their
    original order (no sorting), which pins down the otherwise-arbitrary
    orthogonal factor.
    """
    S = check_matrix(S, "S")
    if S.shape[0] != S.shape[1]:
        raise ValidationError(f"covariance must be square, got {S.shape}")
    if np.all(S == np.diag(np.diagonal(S))):
        w = np.diagonal(S).astype(np.float64).copy()
        V = np.eye(S.shape[0])
    else:
        w, V = sym_eig(S)
    wmax = float(np.max(w, initial=0.0))
    if wmax <= 0.0:
        raise DegenerateCovarianceError("covariance has no positive eigenvalues")
    keep = w > rank_tol * wmax
    if not np.any(keep):
        raise DegenerateCovarianceError("all eigenvalues below rank threshold")
    return V[:, keep].T / np.sqrt(w[keep])[:, None]


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Per-parameter Adam accumulators (bias-corrected update)."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def step(self, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
        param = np.asarray(param, dtype=np.float64)
        grad = np.asarray(grad, dtype=np.float64)
        if param.shape != grad.shape:
            raise ValidationError(
                f"param shape {param.shape} != grad shape {grad.shape}")
        if self.m is None:
            self.m = np.zeros_like(param)
            self.v = np.zeros_like(param)
        if self.m.shape != param.shape:
            raise ValidationError("Adam state shape does not match parameter")
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return param - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(state: AdamState, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Functional wrapper around AdamState.step (state is advanced in place)."""
    return state.step(param, grad)


# ---------------------------------------------------------------------------
# Finite-difference gradient oracle
# ---------------------------------------------------------------------------

def grad_check(f, x0: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error between f's analytic gradient and central differences.

    `f` maps an array to (value, gradient). The error at each entry is
    |g_an - g_fd| / max(1, |g_fd|); the maximum over entries is returned.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    _, g_an = f(x0)
    g_an = np.asarray(g_an, dtype=np.float64)
    if g_an.shape != x0.shape:
        raise ValidationError(
            f"analytic gradient shape {g_an.shape} != parameter shape {x0.shape}")
    g_fd = np.zeros_like(x0)
    flat = x0.ravel()
    fd = g_fd.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp, _ = f(x0)
        flat[i] = orig - h
        fm, _ = f(x0)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValidationError("objective is non-finite at a probe point")
        fd[i] = (fp - fm) / (2.0 * h)
    denom = np.maximum(1.0, np.abs(g_fd))
    return float(np.max(np.abs(g_an - g_fd) / denom))
