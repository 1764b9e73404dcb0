"""Fitting procedures for shared/private component recovery.

All modes minimize a matcher divergence between the two projected views plus
a squared whitening penalty per projection; the weakly supervised mode adds a
squared anchor-pair penalty, the private mode adds whitening and HSIC terms
for the private heads, and the homogeneous mode ties the two projections to a
single matrix.

Optimization runs in whitened coordinates (Q = Q~ W with W the data whitening
matrix), which makes Adam's step size meaningful across data scales, and in
two stages: a cheap multi-restart warm start that matches sorted quantiles
along random slices (a Wasserstein-style realization of the same
distribution-matching constraint), followed by the configured matcher as the
traced training phase. Restart selection uses a frozen two-bandwidth MMD
score on a large deterministic subsample. Covariances and kernel bandwidths
are frozen before the first step, so every run is replay-deterministic under
its seed.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import matio
from .distmatch import (DEFAULT_HIDDEN, Discriminator, KernelSpec,
                        discriminator_step, gan_value_and_grads, hsic_biased,
                        mmd2_unbiased)
from .numerics import (AdamState, ValidationError, check_matrix,
                       empirical_covariance, substream, whitening_matrix)

MODES = ("unaligned", "homogeneous", "weakly_supervised", "with_private")
MATCHERS = ("mmd", "adversarial")

TRACE_COLUMNS = ("epoch", "matcher", "rq1", "rq2", "anchor", "hsic", "total")


class DivergenceError(RuntimeError):
    """Training lost numerical footing; the message names the offending term."""


@dataclass
class SolverConfig:
    """Everything a fit depends on besides the data itself.

    Defaults follow the synthetic-study settings (lr 0.009 / 0.00008, batch
    1000, 50 epochs, lambda 0.1, beta 0.01, omega 10, rho 50, gamma 0.1).
    `restarts`/`warm_epochs` control the quantile warm start that chooses the
    starting point for the traced epochs; restarts=1 with warm_epochs=0
    reduces to plain whitening-plus-noise initialization. Mode-specific
    fields are ignored by the other modes.
    """

    d_c: int
    mode: str = "unaligned"
    matcher: str = "mmd"
    lambda_whiten: float = 0.1
    beta: float = 0.01
    omega: float = 10.0
    rho: float = 50.0
    gamma: float = 0.1
    lr_q: float = 0.009
    lr_f: float = 0.00008
    lr_p: float = 0.001
    lr_clf: float = 0.02
    clf_decay: float = 0.75
    batch: int = 1000
    epochs: int = 50
    seed: int = 0
    d_p1: int = 0
    d_p2: int = 0
    bandwidth: float | None = None
    disc_hidden: tuple = DEFAULT_HIDDEN
    disc_steps: int = 1
    disc_input_dropout: float = 0.0
    label_smoothing: float = 0.2
    init_noise: float = 0.01
    restarts: int = 8
    warm_epochs: int = 30
    warm_slices: int = 24
    warm_batch: int = 1000
    checkpoint_every: int = 10
    checkpoint_rows: int = 2048
    select_rows: int = 4096

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.matcher not in MATCHERS:
            raise ValidationError(
                f"matcher must be one of {MATCHERS}, got '{self.matcher}'")
        if self.d_c < 1:
            raise ValidationError("d_c must be >= 1")
        if self.batch < 2:
            raise ValidationError("batch must be >= 2")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.restarts < 1:
            raise ValidationError("restarts must be >= 1")
        if self.warm_epochs < 0:
            raise ValidationError("warm_epochs must be >= 0")
        if self.warm_batch < 2:
            raise ValidationError("warm_batch must be >= 2")
        for name in ("lambda_whiten", "beta", "omega", "rho", "gamma"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        self.disc_hidden = tuple(int(h) for h in self.disc_hidden)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["disc_hidden"] = list(self.disc_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        d = dict(d)
        if "disc_hidden" in d:
            d["disc_hidden"] = tuple(d["disc_hidden"])
        return cls(**d)


@dataclass(frozen=True)
class Projection:
    """A learned projection and the frozen covariance it was whitened against."""

    matrix: np.ndarray
    covariance: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.matrix.T

    def whitening_residual(self) -> float:
        m = self.matrix @ self.covariance @ self.matrix.T
        return float(np.linalg.norm(m - np.eye(m.shape[0])))


@dataclass(frozen=True)
class AnchorSet:
    """Index pairs (i, j) asserting x1[i] and x2[j] share a latent code."""

    pairs: np.ndarray

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64)
        if pairs.ndim != 2 or pairs.shape[1] != 2:
            raise ValidationError("anchor pairs must have shape (L, 2)")
        if len(np.unique(pairs[:, 0])) != len(pairs):
            raise ValidationError("repeated left index in anchor set")
        if len(np.unique(pairs[:, 1])) != len(pairs):
            raise ValidationError("repeated right index in anchor set")
        object.__setattr__(self, "pairs", pairs)

    def __len__(self) -> int:
        return self.pairs.shape[0]


@dataclass
class FitResult:
    """Learned projections plus the per-epoch loss trace and config echo.

    In homogeneous mode q1 and q2 are the same object. The trace has one row
    per traced epoch with the weighted loss terms (columns TRACE_COLUMNS);
    `total` additionally absorbs the classifier term when one is trained.
    Checkpoints hold the matcher-based objective on a large fixed subsample,
    evaluated every checkpoint_every epochs of the traced phase.
    """

    q1: Projection
    q2: Projection
    qp1: Projection | None = None
    qp2: Projection | None = None
    classifier: tuple[np.ndarray, np.ndarray] | None = None
    trace: np.ndarray = field(default_factory=lambda: np.zeros((0, 7)))
    checkpoints: list = field(default_factory=list)
    wall_clock: float = 0.0
    config: SolverConfig | None = None
    discriminator: Discriminator | None = None

    @property
    def homogeneous(self) -> bool:
        return self.q1 is self.q2


# ---------------------------------------------------------------------------
# Penalties
# ---------------------------------------------------------------------------

def whitening_penalty(q: np.ndarray, sigma: np.ndarray
                      ) -> tuple[float, np.ndarray]:
    """||Q S Q^T - I||_F^2 and its gradient 4 (Q S Q^T - I) Q S."""
    q = check_matrix(q, "Q")
    sigma = check_matrix(sigma, "Sigma")
    if q.shape[1] != sigma.shape[0] or sigma.shape[0] != sigma.shape[1]:
        raise ValidationError(
            f"shape mismatch: Q {q.shape} vs Sigma {sigma.shape}")
    qs = q @ sigma
    m = qs @ q.T - np.eye(q.shape[0])
    return float(np.sum(m * m)), 4.0 * (m @ qs)


def anchor_penalty(q1: np.ndarray, q2: np.ndarray, x1a: np.ndarray,
                   x2a: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Sum of squared projected anchor mismatches and gradients w.r.t. Q1, Q2."""
    d = x1a @ q1.T - x2a @ q2.T
    value = float(np.sum(d * d))
    return value, 2.0 * d.T @ x1a, -2.0 * d.T @ x2a


def quantile_match(u: np.ndarray, v: np.ndarray, directions: np.ndarray
                   ) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean squared sorted-quantile gap over 1-D slices, with gradients.

    Projects both sample sets on each unit direction, sorts, and penalizes
    the squared gap between equal ranks; requires equal sample counts. Used
    as the warm-start surrogate: its gradient stays informative at every
    scale where the two pushforwards differ.
    """
    if u.shape[0] != v.shape[0]:
        raise ValidationError("quantile matching needs equal batch sizes")
    b = u.shape[0]
    a1 = u @ directions.T
    a2 = v @ directions.T
    k = directions.shape[0]
    grad_u = np.zeros_like(u)
    grad_v = np.zeros_like(v)
    value = 0.0
    rows = np.arange(b)
    for i in range(k):
        o1 = np.argsort(a1[:, i], kind="stable")
        o2 = np.argsort(a2[:, i], kind="stable")
        gap = a1[o1, i] - a2[o2, i]
        value += float(gap @ gap) / b
        du = np.zeros(b)
        dv = np.zeros(b)
        du[o1] = 2.0 * gap / b
        dv[o2] = -2.0 * gap / b
        grad_u += np.outer(du, directions[i])
        grad_v += np.outer(dv, directions[i])
    return value / k, grad_u / k, grad_v / k


# ---------------------------------------------------------------------------
# Internal helpers
# ---------------------------------------------------------------------------

def _check_centered(x: np.ndarray, name: str) -> np.ndarray:
    x = check_matrix(x, name)
    mean = np.abs(x.mean(axis=0))
    std = x.std(axis=0)
    if np.any(mean > 1e-6 * np.maximum(std, 1e-300)):
        raise ValidationError(f"{name} is not centered (column mean too large)")
    return x


class _View:
    """One modality: frozen covariance, whitening map, whitened data."""

    def __init__(self, x: np.ndarray, name: str,
                 w: np.ndarray | None = None):
        self.x = _check_centered(x, name)
        self.n = x.shape[0]
        self.sigma = empirical_covariance(self.x, center=False)
        self.w = whitening_matrix(self.sigma) if w is None else w
        self.z = self.x @ self.w.T
        self.rank = self.w.shape[0]
        # covariance of z; identity up to whitening round-off, kept exact so
        # the reported penalty equals the original-space R(Q)
        self.sz = self.w @ self.sigma @ self.w.T


def _prepare_views(x1: np.ndarray, x2: np.ndarray, homogeneous: bool
                   ) -> tuple[_View, _View, np.ndarray | None]:
    """Per-view whitened coordinates; homogeneous mode shares a pooled map
    so that one parameter matrix is one original-space projection."""
    if not homogeneous:
        return _View(x1, "X1"), _View(x2, "X2"), None
    if x1.shape[1] != x2.shape[1]:
        raise ValidationError("homogeneous mode requires equal data dimensions")
    s1 = empirical_covariance(_check_centered(x1, "X1"), center=False)
    s2 = empirical_covariance(_check_centered(x2, "X2"), center=False)
    pooled = 0.5 * (s1 + s2)
    w = whitening_matrix(pooled)
    return _View(x1, "X1", w=w), _View(x2, "X2", w=w), pooled


def _block_init(rank: int, rows: slice, noise: float,
                rng: np.random.Generator, what: str) -> np.ndarray:
    if rows.stop > rank:
        raise ValidationError(
            f"{what}: covariance rank {rank} < required {rows.stop}")
    q = np.zeros((rows.stop - rows.start, rank))
    q[:, rows] = np.eye(rows.stop - rows.start)
    return q + noise * rng.normal(size=q.shape)


def _haar_init(rank: int, k: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.normal(size=(rank, k))
    q, _ = np.linalg.qr(a)
    return q[:, :k].T


class _Matcher:
    """Uniform interface over MMD and the adversarial loss for the fit loop."""

    def __init__(self, cfg: SolverConfig, u0: np.ndarray, v0: np.ndarray,
                 rng: np.random.Generator):
        self.kind = cfg.matcher
        self.kernel = KernelSpec(cfg.bandwidth).resolve(u0, v0)
        if self.kind == "mmd":
            self.disc = None
        else:
            self.disc = Discriminator(
                cfg.d_c, hidden=cfg.disc_hidden, lr=cfg.lr_f,
                label_smoothing=cfg.label_smoothing,
                input_dropout=cfg.disc_input_dropout, rng=rng)
            self.steps = cfg.disc_steps

    def step(self, u: np.ndarray, v: np.ndarray):
        """Matcher value and gradients w.r.t. u, v; updates f when adversarial."""
        if self.kind == "mmd":
            return mmd2_unbiased(u, v, self.kernel)
        for _ in range(self.steps):
            discriminator_step(self.disc, u, v)
        loss, _, gu, gv = gan_value_and_grads(self.disc, u, v)
        return loss, gu, gv

    def evaluate(self, u: np.ndarray, v: np.ndarray) -> float:
        if self.kind == "mmd":
            value, _, _ = mmd2_unbiased(u, v, self.kernel)
        else:
            value, _, _, _ = gan_value_and_grads(self.disc, u, v)
        return value


def _epoch_batches(n1: int, n2: int, batch: int, rng: np.random.Generator):
    """Independent without-replacement minibatch index streams for one epoch."""
    b = min(batch, n1, n2)
    steps = max(1, min(n1, n2) // b)
    perm1 = rng.permutation(n1)
    perm2 = rng.permutation(n2)
    for s in range(steps):
        yield perm1[s * b:(s + 1) * b], perm2[s * b:(s + 1) * b]


def _resolve_anchors(anchors, cfg, n1, n2):
    if cfg.mode == "weakly_supervised":
        if anchors is None or len(anchors) == 0:
            raise ValidationError("weakly_supervised mode requires anchors")
    if anchors is None or len(anchors) == 0 or cfg.beta == 0.0:
        return None
    pairs = anchors.pairs
    if pairs[:, 0].max() >= n1 or pairs[:, 1].max() >= n2 or pairs.min() < 0:
        raise ValidationError("anchor index out of range")
    return pairs


def _guard(term: str, value: float, epoch: int) -> float:
    if not np.isfinite(value):
        raise DivergenceError(f"{term} became non-finite at epoch {epoch}")
    return value


def _warm_start(cfg: SolverConfig, v1: _View, v2: _View, kernel: KernelSpec,
                pairs, homogeneous: bool, rng_init: np.random.Generator,
                rng_batch: np.random.Generator):
    """Multi-restart quantile warm start; returns the best starting point.

    Restart 0 starts from the whitening-plus-noise block; later restarts use
    seeded random orthonormal frames. Candidates are scored by the frozen
    kernel's MMD plus a half-bandwidth MMD on a large leading subsample, which
    separates true matches from scale-local spurious ones.
    """
    d_c = cfg.d_c
    q1_spec = _block_init(v1.rank, slice(0, d_c), cfg.init_noise, rng_init,
                          "Q1" if not homogeneous else "Q")
    q2_spec = q1_spec if homogeneous else _block_init(
        v2.rank, slice(0, d_c), cfg.init_noise, rng_init, "Q2")
    if cfg.warm_epochs == 0 and cfg.restarts == 1:
        return q1_spec, q2_spec

    fine = KernelSpec(kernel.require() * 0.5)
    ns = min(cfg.select_rows, v1.n, v2.n)

    def score(q1, q2):
        u, v = v1.z[:ns] @ q1.T, v2.z[:ns] @ q2.T
        return mmd2_unbiased(u, v, kernel)[0] + mmd2_unbiased(u, v, fine)[0]

    best, best_score = None, np.inf
    for restart in range(cfg.restarts):
        if restart == 0:
            q1, q2 = q1_spec.copy(), q2_spec.copy()
        elif homogeneous:
            q1 = _haar_init(min(v1.rank, v2.rank), d_c, rng_init)
            q2 = q1
        else:
            q1 = _haar_init(v1.rank, d_c, rng_init)
            q2 = _haar_init(v2.rank, d_c, rng_init)
        adam1 = AdamState(lr=cfg.lr_q)
        adam2 = None if homogeneous else AdamState(lr=cfg.lr_q)
        for epoch in range(cfg.warm_epochs):
            for idx1, idx2 in _epoch_batches(v1.n, v2.n, cfg.warm_batch,
                                             rng_batch):
                b1, b2 = v1.z[idx1], v2.z[idx2]
                dirs = rng_batch.normal(size=(cfg.warm_slices, d_c))
                dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
                loss, gu, gv = quantile_match(b1 @ q1.T, b2 @ q2.T, dirs)
                _guard("warm-start quantile matcher", loss, epoch)
                g1 = gu.T @ b1 + cfg.lambda_whiten * whitening_penalty(q1, v1.sz)[1]
                g2 = gv.T @ b2 + cfg.lambda_whiten * whitening_penalty(q2, v2.sz)[1]
                if pairs is not None:
                    _, ga1, ga2 = anchor_penalty(
                        q1, q2, v1.z[pairs[:, 0]], v2.z[pairs[:, 1]])
                    g1 += cfg.beta * ga1
                    g2 += cfg.beta * ga2
                if homogeneous:
                    q1 = adam1.step(q1, g1 + g2)
                    q2 = q1
                else:
                    q1 = adam1.step(q1, g1)
                    q2 = adam2.step(q2, g2)
        s = score(q1, q2)
        if s < best_score:
            best, best_score = (q1, q2), s
    return best


# ---------------------------------------------------------------------------
# Main fit (unaligned / homogeneous / weakly supervised)
# ---------------------------------------------------------------------------

def fit(x1: np.ndarray, x2: np.ndarray, cfg: SolverConfig,
        anchors: AnchorSet | None = None) -> FitResult:
    """Learn the shared-component projections by distribution matching.

    Minimizes matcher(Q1 x1, Q2 x2) + lambda (R(Q1) + R(Q2)), plus
    beta * sum_l ||Q1 x1_l - Q2 x2_l||^2 over anchor pairs when provided.
    Homogeneous mode trains a single matrix against both covariance
    penalties. The kernel bandwidth is frozen from the initial projections;
    the warm start (see SolverConfig) picks the starting point, after which
    the configured matcher drives the traced epochs.
    """
    t0 = time.perf_counter()
    homogeneous = cfg.mode == "homogeneous"
    v1, v2, pooled = _prepare_views(x1, x2, homogeneous)
    pairs = _resolve_anchors(anchors, cfg, v1.n, v2.n)

    rng_init = substream(cfg.seed, "solver", "init")
    rng_batch = substream(cfg.seed, "solver", "batches")
    rng_disc = substream(cfg.seed, "solver", "disc")

    d_c = cfg.d_c
    probe1 = _block_init(v1.rank, slice(0, d_c), 0.0, rng_init, "Q1")
    probe2 = probe1 if homogeneous else _block_init(
        v2.rank, slice(0, d_c), 0.0, rng_init, "Q2")
    matcher = _Matcher(cfg, v1.z[:1000] @ probe1.T, v2.z[:1000] @ probe2.T,
                       rng_disc)

    q1, q2 = _warm_start(cfg, v1, v2, matcher.kernel, pairs, homogeneous,
                         rng_init, rng_batch)
    adam1 = AdamState(lr=cfg.lr_q)
    adam2 = None if homogeneous else AdamState(lr=cfg.lr_q)

    nck = min(cfg.checkpoint_rows, v1.n, v2.n)

    def checkpoint_loss() -> float:
        value = matcher.evaluate(v1.z[:nck] @ q1.T, v2.z[:nck] @ q2.T)
        value += cfg.lambda_whiten * (whitening_penalty(q1, v1.sz)[0]
                                      + whitening_penalty(q2, v2.sz)[0])
        if pairs is not None:
            value += cfg.beta * anchor_penalty(
                q1, q2, v1.z[pairs[:, 0]], v2.z[pairs[:, 1]])[0]
        return value

    checkpoints = [(0, checkpoint_loss())]
    trace = np.zeros((cfg.epochs, len(TRACE_COLUMNS)))
    init_matcher = None

    for epoch in range(cfg.epochs):
        sums = np.zeros(5)  # matcher, rq1, rq2, anchor, hsic
        steps = 0
        for idx1, idx2 in _epoch_batches(v1.n, v2.n, cfg.batch, rng_batch):
            b1, b2 = v1.z[idx1], v2.z[idx2]
            loss_m, gu, gv = matcher.step(b1 @ q1.T, b2 @ q2.T)
            _guard("matcher", loss_m, epoch)
            if init_matcher is None:
                init_matcher = loss_m
            elif loss_m > 10.0 * max(abs(init_matcher), 1.0):
                raise DivergenceError(
                    f"matcher loss {loss_m:.3g} exceeds 10x its initial value "
                    f"{init_matcher:.3g} at epoch {epoch}")
            r1, gr1 = whitening_penalty(q1, v1.sz)
            r2, gr2 = whitening_penalty(q2, v2.sz)
            _guard("whitening penalty", r1 + r2, epoch)
            g1 = gu.T @ b1 + cfg.lambda_whiten * gr1
            g2 = gv.T @ b2 + cfg.lambda_whiten * gr2
            a_val = 0.0
            if pairs is not None:
                a_val, ga1, ga2 = anchor_penalty(
                    q1, q2, v1.z[pairs[:, 0]], v2.z[pairs[:, 1]])
                _guard("anchor penalty", a_val, epoch)
                g1 += cfg.beta * ga1
                g2 += cfg.beta * ga2
            if homogeneous:
                q1 = adam1.step(q1, g1 + g2)
                q2 = q1
            else:
                q1 = adam1.step(q1, g1)
                q2 = adam2.step(q2, g2)
            sums += (loss_m, cfg.lambda_whiten * r1, cfg.lambda_whiten * r2,
                     cfg.beta * a_val, 0.0)
            steps += 1
        mean = sums / steps
        trace[epoch] = (epoch, *mean, mean.sum())
        if (epoch + 1) % cfg.checkpoint_every == 0 or epoch == cfg.epochs - 1:
            checkpoints.append((epoch + 1, checkpoint_loss()))

    if homogeneous:
        p1 = Projection(q1 @ v1.w, pooled)
        p2 = p1
    else:
        p1 = Projection(q1 @ v1.w, v1.sigma)
        p2 = Projection(q2 @ v2.w, v2.sigma)
    return FitResult(q1=p1, q2=p2, trace=trace, checkpoints=checkpoints,
                     wall_clock=time.perf_counter() - t0, config=replace(cfg),
                     discriminator=matcher.disc)


# ---------------------------------------------------------------------------
# Private-component extraction
# ---------------------------------------------------------------------------

def fit_with_private(x1: np.ndarray, x2: np.ndarray,
                     cfg: SolverConfig) -> FitResult:
    """Jointly learn shared projections and per-modality private heads.

    Objective: matcher on the shared projections + lambda R(Q_C) terms +
    omega R(Q_P) terms + rho * HSIC(Q_C x, Q_P x) per modality. The private
    heads start from the next whitening rows and only join once the warm
    start has placed the shared heads; HSIC kernel bandwidths are frozen from
    the initial projections.
    """
    t0 = time.perf_counter()
    if cfg.d_p1 < 1 or cfg.d_p2 < 1:
        raise ValidationError("with_private requires d_p1 >= 1 and d_p2 >= 1")
    v1 = _View(x1, "X1")
    v2 = _View(x2, "X2")

    rng_init = substream(cfg.seed, "solver", "init")
    rng_batch = substream(cfg.seed, "solver", "batches")
    rng_disc = substream(cfg.seed, "solver", "disc")

    d_c = cfg.d_c
    probe1 = _block_init(v1.rank, slice(0, d_c), 0.0, rng_init, "QC1")
    probe2 = _block_init(v2.rank, slice(0, d_c), 0.0, rng_init, "QC2")
    matcher = _Matcher(cfg, v1.z[:1000] @ probe1.T, v2.z[:1000] @ probe2.T,
                       rng_disc)

    qp1 = _block_init(v1.rank, slice(d_c, d_c + cfg.d_p1), cfg.init_noise,
                      rng_init, "QP1")
    qp2 = _block_init(v2.rank, slice(d_c, d_c + cfg.d_p2), cfg.init_noise,
                      rng_init, "QP2")
    qc1, qc2 = _warm_start(cfg, v1, v2, matcher.kernel, None, False,
                           rng_init, rng_batch)

    kc1 = KernelSpec().resolve(v1.z[:1000] @ qc1.T)
    kp1 = KernelSpec().resolve(v1.z[:1000] @ qp1.T)
    kc2 = KernelSpec().resolve(v2.z[:1000] @ qc2.T)
    kp2 = KernelSpec().resolve(v2.z[:1000] @ qp2.T)

    adams = {name: AdamState(lr=cfg.lr_q if name.startswith("qc") else cfg.lr_p)
             for name in ("qc1", "qc2", "qp1", "qp2")}

    trace = np.zeros((cfg.epochs, len(TRACE_COLUMNS)))
    nck = min(cfg.checkpoint_rows, v1.n, v2.n)
    nh = min(nck, 1024)

    def checkpoint_loss() -> float:
        value = matcher.evaluate(v1.z[:nck] @ qc1.T, v2.z[:nck] @ qc2.T)
        value += cfg.lambda_whiten * (whitening_penalty(qc1, v1.sz)[0]
                                      + whitening_penalty(qc2, v2.sz)[0])
        value += cfg.omega * (whitening_penalty(qp1, v1.sz)[0]
                              + whitening_penalty(qp2, v2.sz)[0])
        value += cfg.rho * (hsic_biased(v1.z[:nh] @ qc1.T, v1.z[:nh] @ qp1.T,
                                        kc1, kp1)[0]
                            + hsic_biased(v2.z[:nh] @ qc2.T, v2.z[:nh] @ qp2.T,
                                          kc2, kp2)[0])
        return value

    checkpoints = [(0, checkpoint_loss())]
    init_matcher = None

    for epoch in range(cfg.epochs):
        sums = np.zeros(5)
        steps = 0
        for idx1, idx2 in _epoch_batches(v1.n, v2.n, cfg.batch, rng_batch):
            b1, b2 = v1.z[idx1], v2.z[idx2]
            u1, w1p = b1 @ qc1.T, b1 @ qp1.T
            u2, w2p = b2 @ qc2.T, b2 @ qp2.T
            loss_m, gu, gv = matcher.step(u1, u2)
            _guard("matcher", loss_m, epoch)
            if init_matcher is None:
                init_matcher = loss_m
            elif loss_m > 10.0 * max(abs(init_matcher), 1.0):
                raise DivergenceError(
                    f"matcher loss {loss_m:.3g} exceeds 10x its initial value "
                    f"at epoch {epoch}")
            h1, ghc1, ghp1 = hsic_biased(u1, w1p, kc1, kp1)
            h2, ghc2, ghp2 = hsic_biased(u2, w2p, kc2, kp2)
            _guard("hsic", h1 + h2, epoch)

            rc1, grc1 = whitening_penalty(qc1, v1.sz)
            rc2, grc2 = whitening_penalty(qc2, v2.sz)
            rp1, grp1 = whitening_penalty(qp1, v1.sz)
            rp2, grp2 = whitening_penalty(qp2, v2.sz)

            g_qc1 = gu.T @ b1 + cfg.lambda_whiten * grc1 + cfg.rho * ghc1.T @ b1
            g_qc2 = gv.T @ b2 + cfg.lambda_whiten * grc2 + cfg.rho * ghc2.T @ b2
            g_qp1 = cfg.omega * grp1 + cfg.rho * ghp1.T @ b1
            g_qp2 = cfg.omega * grp2 + cfg.rho * ghp2.T @ b2

            qc1 = adams["qc1"].step(qc1, g_qc1)
            qc2 = adams["qc2"].step(qc2, g_qc2)
            qp1 = adams["qp1"].step(qp1, g_qp1)
            qp2 = adams["qp2"].step(qp2, g_qp2)

            sums += (loss_m,
                     cfg.lambda_whiten * rc1 + cfg.omega * rp1,
                     cfg.lambda_whiten * rc2 + cfg.omega * rp2,
                     0.0, cfg.rho * (h1 + h2))
            steps += 1
        mean = sums / steps
        trace[epoch] = (epoch, *mean, mean.sum())

    checkpoints.append((cfg.epochs, checkpoint_loss()))
    return FitResult(
        q1=Projection(qc1 @ v1.w, v1.sigma), q2=Projection(qc2 @ v2.w, v2.sigma),
        qp1=Projection(qp1 @ v1.w, v1.sigma), qp2=Projection(qp2 @ v2.w, v2.sigma),
        trace=trace, checkpoints=checkpoints,
        wall_clock=time.perf_counter() - t0, config=replace(cfg),
        discriminator=matcher.disc)


# ---------------------------------------------------------------------------
# Classifier head (homogeneous domain-adaptation style)
# ---------------------------------------------------------------------------

def fit_with_classifier(x1: np.ndarray, labels1: np.ndarray, x2: np.ndarray,
                        cfg: SolverConfig) -> FitResult:
    """Homogeneous fit with a jointly trained linear softmax head on view 1.

    Adds gamma * CE(softmax(W Q x1 + b), labels) to the matching objective;
    the classifier learning rate decays by clf_decay each epoch. The returned
    classifier predicts labels for projected view-2 data.
    """
    t0 = time.perf_counter()
    if cfg.mode != "homogeneous":
        raise ValidationError("fit_with_classifier requires homogeneous mode")
    labels1 = np.asarray(labels1)
    if labels1.ndim != 1 or labels1.shape[0] != x1.shape[0]:
        raise ValidationError("labels must be one integer per row of X1")
    if labels1.min() < 0:
        raise ValidationError("labels must be non-negative")
    n_classes = int(labels1.max()) + 1
    v1, v2, pooled = _prepare_views(x1, x2, homogeneous=True)

    rng_init = substream(cfg.seed, "solver", "init")
    rng_batch = substream(cfg.seed, "solver", "batches")
    rng_disc = substream(cfg.seed, "solver", "disc")

    d_c = cfg.d_c
    probe = _block_init(v1.rank, slice(0, d_c), 0.0, rng_init, "Q")
    matcher = _Matcher(cfg, v1.z[:1000] @ probe.T, v2.z[:1000] @ probe.T,
                       rng_disc)
    q, _ = _warm_start(cfg, v1, v2, matcher.kernel, None, True,
                       rng_init, rng_batch)
    w = np.zeros((n_classes, d_c))
    bias = np.zeros(n_classes)

    adam_q = AdamState(lr=cfg.lr_q)
    adam_w = AdamState(lr=cfg.lr_clf)
    adam_b = AdamState(lr=cfg.lr_clf)

    trace = np.zeros((cfg.epochs, len(TRACE_COLUMNS)))
    init_matcher = None

    for epoch in range(cfg.epochs):
        lr_now = cfg.lr_clf * (cfg.clf_decay ** epoch)
        adam_w.lr = lr_now
        adam_b.lr = lr_now
        sums = np.zeros(6)  # matcher, rq1, rq2, anchor, hsic, ce
        steps = 0
        for idx1, idx2 in _epoch_batches(v1.n, v2.n, cfg.batch, rng_batch):
            b1, b2 = v1.z[idx1], v2.z[idx2]
            u, v = b1 @ q.T, b2 @ q.T
            loss_m, gu, gv = matcher.step(u, v)
            _guard("matcher", loss_m, epoch)
            if init_matcher is None:
                init_matcher = loss_m
            elif loss_m > 10.0 * max(abs(init_matcher), 1.0):
                raise DivergenceError(
                    f"matcher loss {loss_m:.3g} exceeds 10x its initial value "
                    f"at epoch {epoch}")
            r1, gr1 = whitening_penalty(q, v1.sz)
            r2, gr2 = whitening_penalty(q, v2.sz)

            ce, d_logits = _cross_entropy(u, w, bias, labels1[idx1])
            _guard("classifier cross-entropy", ce, epoch)
            g_w = cfg.gamma * d_logits.T @ u
            g_b = cfg.gamma * d_logits.sum(axis=0)
            g_u = cfg.gamma * d_logits @ w

            g_q = (gu + g_u).T @ b1 + gv.T @ b2 \
                + cfg.lambda_whiten * (gr1 + gr2)
            q = adam_q.step(q, g_q)
            w = adam_w.step(w, g_w)
            bias = adam_b.step(bias, g_b)

            sums += (loss_m, cfg.lambda_whiten * r1, cfg.lambda_whiten * r2,
                     0.0, 0.0, cfg.gamma * ce)
            steps += 1
        mean = sums / steps
        trace[epoch] = (epoch, *mean[:5], mean.sum())

    proj = Projection(q @ v1.w, pooled)
    return FitResult(q1=proj, q2=proj, classifier=(w, bias), trace=trace,
                     wall_clock=time.perf_counter() - t0, config=replace(cfg),
                     discriminator=matcher.disc)


def _cross_entropy(u: np.ndarray, w: np.ndarray, b: np.ndarray,
                   labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and gradient w.r.t. the logits."""
    if labels.max() >= w.shape[0]:
        raise ValidationError("label out of range for classifier head")
    logits = u @ w.T + b
    logits -= logits.max(axis=1, keepdims=True)
    expl = np.exp(logits)
    probs = expl / expl.sum(axis=1, keepdims=True)
    n = u.shape[0]
    ce = -float(np.mean(np.log(np.maximum(probs[np.arange(n), labels], 1e-300))))
    d_logits = probs.copy()
    d_logits[np.arange(n), labels] -= 1.0
    return ce, d_logits / n


def classify(result: FitResult, x: np.ndarray) -> np.ndarray:
    """Predict labels for (centered) observations using the trained head."""
    if result.classifier is None:
        raise ValidationError("fit result has no classifier head")
    w, b = result.classifier
    logits = result.q1.apply(x) @ w.T + b
    return np.argmax(logits, axis=1)


# ---------------------------------------------------------------------------
# Model directory serialization
# ---------------------------------------------------------------------------

def save_model(result: FitResult, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    matio.write_matrix(directory, "Q1", result.q1.matrix, role="shared projection 1")
    matio.write_matrix(directory, "Sigma1", result.q1.covariance,
                       role="frozen covariance 1")
    if not result.homogeneous:
        matio.write_matrix(directory, "Q2", result.q2.matrix,
                           role="shared projection 2")
        matio.write_matrix(directory, "Sigma2", result.q2.covariance,
                           role="frozen covariance 2")
    for name, proj in (("QP1", result.qp1), ("QP2", result.qp2)):
        if proj is not None:
            matio.write_matrix(directory, name, proj.matrix,
                               role=f"private projection {name[-1]}")
    if result.classifier is not None:
        w, b = result.classifier
        matio.write_matrix(directory, "clf_W", w, role="classifier weights")
        matio.write_matrix(directory, "clf_b", b.reshape(1, -1),
                           role="classifier bias")
    if result.discriminator is not None:
        f = result.discriminator
        for i, (wt, bs) in enumerate(zip(f.weights, f.biases)):
            matio.write_matrix(directory, f"disc_W{i}", wt, role="discriminator")
            matio.write_matrix(directory, f"disc_b{i}", bs.reshape(1, -1),
                               role="discriminator")
    matio.write_csv(os.path.join(directory, "loss_trace.csv"), result.trace,
                    list(TRACE_COLUMNS))
    meta = {
        "kind": "unisca-model",
        "version": 1,
        "homogeneous": result.homogeneous,
        "has_private": result.qp1 is not None,
        "has_classifier": result.classifier is not None,
        "has_discriminator": result.discriminator is not None,
        "disc_hidden": (list(result.discriminator.hidden)
                        if result.discriminator else None),
        "config": result.config.to_dict() if result.config else None,
        "checkpoints": [[int(e), float(v)] for e, v in result.checkpoints],
    }
    with open(os.path.join(directory, "model.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(directory, "timing.json"), "w", encoding="utf-8") as fh:
        json.dump({"wall_clock_seconds": result.wall_clock}, fh)
        fh.write("\n")


def load_model(directory: str) -> FitResult:
    with open(os.path.join(directory, "model.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("kind") != "unisca-model":
        raise ValidationError(f"{directory} is not a model directory")
    cfg = SolverConfig.from_dict(meta["config"]) if meta.get("config") else None
    q1 = Projection(matio.read_matrix(directory, "Q1")[0],
                    matio.read_matrix(directory, "Sigma1")[0])
    if meta["homogeneous"]:
        q2 = q1
    else:
        q2 = Projection(matio.read_matrix(directory, "Q2")[0],
                        matio.read_matrix(directory, "Sigma2")[0])
    qp1 = qp2 = None
    if meta.get("has_private"):
        qp1 = Projection(matio.read_matrix(directory, "QP1")[0], q1.covariance)
        qp2 = Projection(matio.read_matrix(directory, "QP2")[0], q2.covariance)
    classifier = None
    if meta.get("has_classifier"):
        classifier = (matio.read_matrix(directory, "clf_W")[0],
                      matio.read_matrix(directory, "clf_b")[0].reshape(-1))
    disc = None
    if meta.get("has_discriminator") and cfg is not None:
        disc = Discriminator(q1.matrix.shape[0], hidden=tuple(meta["disc_hidden"]),
                             lr=cfg.lr_f, label_smoothing=cfg.label_smoothing,
                             input_dropout=cfg.disc_input_dropout,
                             rng=substream(cfg.seed, "solver", "disc-reload"))
        for i in range(len(disc.weights)):
            disc.weights[i] = matio.read_matrix(directory, f"disc_W{i}")[0]
            disc.biases[i] = matio.read_matrix(directory, f"disc_b{i}")[0].reshape(-1)
    trace = _read_trace(os.path.join(directory, "loss_trace.csv"))
    checkpoints = [tuple(c) for c in meta.get("checkpoints", [])]
    return FitResult(q1=q1, q2=q2, qp1=qp1, qp2=qp2, classifier=classifier,
                     trace=trace, checkpoints=checkpoints, config=cfg,
                     discriminator=disc)


def _read_trace(path: str) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().strip().splitlines()
    if len(lines) <= 1:
        return np.zeros((0, len(TRACE_COLUMNS)))
    return np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
