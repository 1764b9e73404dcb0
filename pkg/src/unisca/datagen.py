"""Synthetic two-modality data: latent sampling, linear mixing, serialization.

Each sample is built from one shared code and one private code per modality;
the observation is the mixed latent vector. Generated datasets keep the hidden
ground truth (latents, mixing matrices, row alignment) so downstream metrics
can score identification quality, but the solver itself only ever sees the
centered observation matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import matio
from .numerics import ValidationError, check_matrix, substream

_KINDS = ("normal", "uniform", "laplace", "gamma", "beta", "vonmises", "mixture")


@dataclass(frozen=True)
class DistributionSpec:
    """Declarative 1-D marginal: a kind tag plus its parameter tuple.

    Kinds and parameters:
      normal(mu, sigma)     uniform(a, b)       laplace(mu, b)
      gamma(alpha, theta)   beta(alpha, beta)   vonmises(mu, kappa)
      mixture(((w, mu, sigma), ...))

    Von Mises samples follow the usual wrapped convention and land in
    [-pi, pi]. Parameters are validated at construction.
    """

    kind: str
    params: tuple

    def __post_init__(self):
        k, p = self.kind, self.params
        if k not in _KINDS:
            raise ValidationError(f"unknown distribution kind '{k}'")
        if k == "mixture":
            if not p:
                raise ValidationError("mixture needs at least one component")
            weights = [w for w, _, _ in p]
            if any(w <= 0 for w in weights):
                raise ValidationError("mixture weights must be positive")
            if abs(sum(weights) - 1.0) > 1e-9:
                raise ValidationError("mixture weights must sum to 1")
            if any(s <= 0 for _, _, s in p):
                raise ValidationError("mixture component sigma must be > 0")
            return
        if len(p) != 2 or not all(np.isfinite(p)):
            raise ValidationError(f"{k} expects 2 finite parameters, got {p}")
        a, b = p
        if k == "normal" and b <= 0:
            raise ValidationError("normal sigma must be > 0")
        if k == "uniform" and not a < b:
            raise ValidationError("uniform requires a < b")
        if k == "laplace" and b <= 0:
            raise ValidationError("laplace scale must be > 0")
        if k in ("gamma", "beta") and (a <= 0 or b <= 0):
            raise ValidationError(f"{k} shape parameters must be > 0")
        if k == "vonmises" and b <= 0:
            raise ValidationError("vonmises concentration must be > 0")

    # -- constructors -------------------------------------------------------
    @classmethod
    def normal(cls, mu, sigma):
        return cls("normal", (float(mu), float(sigma)))

    @classmethod
    def uniform(cls, a, b):
        return cls("uniform", (float(a), float(b)))

    @classmethod
    def laplace(cls, mu, b):
        return cls("laplace", (float(mu), float(b)))

    @classmethod
    def gamma(cls, alpha, theta):
        return cls("gamma", (float(alpha), float(theta)))

    @classmethod
    def beta(cls, alpha, beta):
        return cls("beta", (float(alpha), float(beta)))

    @classmethod
    def vonmises(cls, mu, kappa):
        return cls("vonmises", (float(mu), float(kappa)))

    @classmethod
    def mixture(cls, components):
        comps = tuple((float(w), float(m), float(s)) for w, m, s in components)
        return cls("mixture", comps)

    # -- sampling -----------------------------------------------------------
    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        k, p = self.kind, self.params
        if k == "normal":
            return rng.normal(p[0], p[1], size=n)
        if k == "uniform":
            return rng.uniform(p[0], p[1], size=n)
        if k == "laplace":
            return rng.laplace(p[0], p[1], size=n)
        if k == "gamma":
            return rng.gamma(shape=p[0], scale=p[1], size=n)
        if k == "beta":
            return rng.beta(p[0], p[1], size=n)
        if k == "vonmises":
            return rng.vonmises(p[0], p[1], size=n)
        weights = np.array([w for w, _, _ in p])
        mus = np.array([m for _, m, _ in p])
        sigmas = np.array([s for _, _, s in p])
        comp = rng.choice(len(p), size=n, p=weights)
        return rng.normal(mus[comp], sigmas[comp])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": [list(c) if isinstance(c, tuple) else c
                                              for c in self.params]}

    @classmethod
    def from_dict(cls, d: dict) -> "DistributionSpec":
        params = d["params"]
        if d["kind"] == "mixture":
            return cls.mixture(params)
        return cls(d["kind"], tuple(float(v) for v in params))


def sample_distribution(spec: DistributionSpec, n: int,
                        rng: np.random.Generator) -> np.ndarray:
    return spec.sample(n, rng)


@dataclass(frozen=True)
class LatentSpec:
    """Marginals of the shared code and of each modality's private code."""

    shared: tuple
    private1: tuple = ()
    private2: tuple = ()

    def __post_init__(self):
        if len(self.shared) < 1:
            raise ValidationError("need at least one shared component")

    @property
    def d_c(self) -> int:
        return len(self.shared)

    def d_p(self, q: int) -> int:
        return len(self.private1) if q == 1 else len(self.private2)

    def to_dict(self) -> dict:
        return {
            "shared": [s.to_dict() for s in self.shared],
            "private1": [s.to_dict() for s in self.private1],
            "private2": [s.to_dict() for s in self.private2],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LatentSpec":
        return cls(
            shared=tuple(DistributionSpec.from_dict(s) for s in d["shared"]),
            private1=tuple(DistributionSpec.from_dict(s) for s in d.get("private1", [])),
            private2=tuple(DistributionSpec.from_dict(s) for s in d.get("private2", [])),
        )


def _check_full_column_rank(a: np.ndarray, name: str) -> None:
    sv = np.linalg.svd(a, compute_uv=False)
    if a.shape[0] < a.shape[1] or sv[-1] <= 1e-8 * sv[0]:
        raise ValidationError(f"{name} is not full column rank")


@dataclass
class MixingModel:
    """Ground-truth mixing matrices, one per modality (identical if homogeneous)."""

    a1: np.ndarray
    a2: np.ndarray
    homogeneous: bool = False

    def __post_init__(self):
        self.a1 = check_matrix(self.a1, "A1")
        self.a2 = check_matrix(self.a2, "A2")
        _check_full_column_rank(self.a1, "A1")
        _check_full_column_rank(self.a2, "A2")
        if self.homogeneous:
            if self.a1.shape != self.a2.shape or not np.array_equal(self.a1, self.a2):
                raise ValidationError("homogeneous mixing requires A1 == A2")

    @classmethod
    def random(cls, latent: LatentSpec, rng: np.random.Generator,
               d1: int | None = None, d2: int | None = None,
               homogeneous: bool = False, max_retries: int = 20) -> "MixingModel":
        """Draw standard-normal mixing matrices, redrawing on rank failure.

        Observation dims default to the latent dims (square mixing).
        """
        k1 = latent.d_c + latent.d_p(1)
        k2 = latent.d_c + latent.d_p(2)
        d1 = k1 if d1 is None else int(d1)
        d2 = k2 if d2 is None else int(d2)
        if homogeneous and (k1 != k2 or d1 != d2):
            raise ValidationError("homogeneous mixing requires equal dimensions")
        for _ in range(max_retries):
            a1 = rng.normal(size=(d1, k1))
            a2 = a1.copy() if homogeneous else rng.normal(size=(d2, k2))
            try:
                return cls(a1, a2, homogeneous=homogeneous)
            except ValidationError:
                continue
        raise ValidationError("could not draw full-column-rank mixing matrices")


@dataclass(frozen=True)
class MixingTemplate:
    """Dimensions-only description of a mixing model, realized per dataset."""

    d1: int | None = None
    d2: int | None = None
    homogeneous: bool = False

    def realize(self, latent: LatentSpec, rng: np.random.Generator) -> MixingModel:
        return MixingModel.random(latent, rng, d1=self.d1, d2=self.d2,
                                  homogeneous=self.homogeneous)


@dataclass
class SyntheticDataset:
    """Centered two-view observations plus hidden ground truth.

    Training rows of x2 are shuffled: x2[alignment[i]] was generated from the
    same shared code as x1[i]. The held-out test block is kept aligned
    row-by-row and centered with the training means, so it can serve as an
    oracle for pair-level metrics without ever touching training.
    """

    x1: np.ndarray
    x2: np.ndarray
    c: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    alignment: np.ndarray
    x1_test: np.ndarray
    x2_test: np.ndarray
    c_test: np.ndarray
    mixing: MixingModel
    mean1: np.ndarray
    mean2: np.ndarray
    latent: LatentSpec | None = None
    p1_test: np.ndarray | None = None
    p2_test: np.ndarray | None = None

    @property
    def d_c(self) -> int:
        return self.c.shape[1]


def generate_dataset(latent: LatentSpec, mixing: MixingModel, n: int,
                     rng: np.random.Generator, test_fraction: float = 0.05,
                     shuffle: bool = True) -> SyntheticDataset:
    """Draw shared codes, mix both views from the same code per row, center.

    The training matrices have exactly n rows; an extra ceil(test_fraction*n)
    aligned rows are drawn as the held-out block, reserved before the training
    rows of view 2 are shuffled.
    """
    if n < 2:
        raise ValidationError("need at least 2 samples")
    d_c, d_p1, d_p2 = latent.d_c, latent.d_p(1), latent.d_p(2)
    if mixing.a1.shape[1] != d_c + d_p1 or mixing.a2.shape[1] != d_c + d_p2:
        raise ValidationError("mixing matrix columns do not match latent dims")

    n_test = int(math.ceil(test_fraction * n)) if test_fraction > 0 else 0
    n_train = n
    total = n_train + n_test

    c = np.column_stack([s.sample(total, rng) for s in latent.shared])
    p1 = (np.column_stack([s.sample(total, rng) for s in latent.private1])
          if d_p1 else np.zeros((total, 0)))
    p2 = (np.column_stack([s.sample(total, rng) for s in latent.private2])
          if d_p2 else np.zeros((total, 0)))

    x1_raw = np.hstack([c, p1]) @ mixing.a1.T
    x2_raw = np.hstack([c, p2]) @ mixing.a2.T

    mean1 = x1_raw[:n_train].mean(axis=0)
    mean2 = x2_raw[:n_train].mean(axis=0)
    x1 = x1_raw[:n_train] - mean1
    x2_aligned = x2_raw[:n_train] - mean2

    if shuffle:
        perm = rng.permutation(n_train)
        alignment = np.argsort(perm)
        x2 = x2_aligned[perm]
    else:
        alignment = np.arange(n_train)
        x2 = x2_aligned

    return SyntheticDataset(
        x1=x1, x2=x2,
        c=c[:n_train], p1=p1[:n_train], p2=p2[:n_train],
        alignment=alignment,
        x1_test=x1_raw[n_train:] - mean1,
        x2_test=x2_raw[n_train:] - mean2,
        c_test=c[n_train:],
        p1_test=p1[n_train:], p2_test=p2[n_train:],
        mixing=mixing, mean1=mean1, mean2=mean2, latent=latent,
    )


def sample_anchors(dataset: SyntheticDataset, count: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Pick `count` aligned training pairs (i in x1, j in x2) without repeats."""
    n = dataset.x1.shape[0]
    if count > n:
        raise ValidationError(f"cannot sample {count} anchors from {n} rows")
    left = rng.choice(n, size=count, replace=False)
    return np.column_stack([left, dataset.alignment[left]]).astype(np.int64)


# ---------------------------------------------------------------------------
# Presets mirroring the synthetic study configurations
# ---------------------------------------------------------------------------

PRESET_NAMES = ("thm1a", "thm1b", "thm3-laplace", "private-appxG")


def preset(name: str, rng: np.random.Generator | None = None
           ) -> tuple[LatentSpec, MixingTemplate]:
    """Return the named synthetic setup (latent marginals + mixing template).

    thm1a's first shared marginal is a 3-component Gaussian mixture whose
    component means are themselves random draws; they are fixed once from
    `rng` (a zero-seeded substream when omitted) so a given seed always maps
    to the same mixture.
    """
    if name == "thm1a":
        if rng is None:
            rng = substream(0, "datagen", "preset-means")
        mus = rng.normal(0.0, np.sqrt(10.0), size=3)
        gm = DistributionSpec.mixture([(1.0 / 3.0, m, np.sqrt(2.0)) for m in mus])
        latent = LatentSpec(
            shared=(gm, DistributionSpec.gamma(1.0, 3.0)),
            private1=(DistributionSpec.laplace(1.0, 6.5),),
            private2=(DistributionSpec.uniform(-10.0, 10.0),),
        )
        return latent, MixingTemplate()
    if name == "thm1b":
        vm = DistributionSpec.vonmises(2.5, 2.0)
        latent = LatentSpec(
            shared=(vm, vm),
            private1=(DistributionSpec.laplace(1.0, 6.5),),
            private2=(DistributionSpec.gamma(0.5, 3.0),),
        )
        return latent, MixingTemplate()
    if name == "thm3-laplace":
        lap = DistributionSpec.laplace(0.0, 6.5)
        latent = LatentSpec(
            shared=(lap, lap, lap),
            private1=(DistributionSpec.uniform(-10.0, 10.0),),
            private2=(DistributionSpec.gamma(0.5, 3.0),),
        )
        return latent, MixingTemplate()
    if name == "private-appxG":
        vm = DistributionSpec.vonmises(2.5, 2.0)
        latent = LatentSpec(
            shared=(vm, vm),
            private1=(DistributionSpec.beta(1.0, 3.0),),
            private2=(DistributionSpec.gamma(0.5, 3.0),),
        )
        return latent, MixingTemplate()
    raise ValidationError(
        f"unknown preset '{name}'; valid presets: {', '.join(PRESET_NAMES)}")


# ---------------------------------------------------------------------------
# Directory serialization
# ---------------------------------------------------------------------------

def save_dataset(dataset: SyntheticDataset, directory: str,
                 seed: int | None = None, manifest_extra: dict | None = None,
                 csv: bool = False) -> None:
    import json
    import os

    os.makedirs(directory, exist_ok=True)
    mats = {
        "X1": (dataset.x1, "observations modality 1 (train, centered)"),
        "X2": (dataset.x2, "observations modality 2 (train, centered, shuffled)"),
        "C": (dataset.c, "ground-truth shared codes (train)"),
        "P1": (dataset.p1, "ground-truth private codes modality 1"),
        "P2": (dataset.p2, "ground-truth private codes modality 2"),
        "X1_test": (dataset.x1_test, "held-out observations modality 1 (aligned)"),
        "X2_test": (dataset.x2_test, "held-out observations modality 2 (aligned)"),
        "C_test": (dataset.c_test, "ground-truth shared codes (held-out)"),
        "A1": (dataset.mixing.a1, "ground-truth mixing modality 1"),
        "A2": (dataset.mixing.a2, "ground-truth mixing modality 2"),
        "mean1": (dataset.mean1.reshape(1, -1), "train column means modality 1"),
        "mean2": (dataset.mean2.reshape(1, -1), "train column means modality 2"),
    }
    for name, (a, role) in mats.items():
        matio.write_matrix(directory, name, a, role=role)
    matio.write_matrix(directory, "alignment", dataset.alignment.reshape(-1, 1),
                       role="row alignment x1[i] <-> x2[alignment[i]]", dtype="<i8")
    manifest = {
        "kind": "unisca-dataset",
        "version": 1,
        "seed": seed,
        "n_train": int(dataset.x1.shape[0]),
        "n_test": int(dataset.x1_test.shape[0]),
        "d_c": int(dataset.d_c),
        "d_p": [int(dataset.p1.shape[1]), int(dataset.p2.shape[1])],
        "homogeneous": bool(dataset.mixing.homogeneous),
        "latent": dataset.latent.to_dict() if dataset.latent else None,
    }
    manifest.update(manifest_extra or {})
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if csv:
        matio.write_csv(os.path.join(directory, "X1.csv"), dataset.x1,
                        [f"x{i}" for i in range(dataset.x1.shape[1])])
        matio.write_csv(os.path.join(directory, "X2.csv"), dataset.x2,
                        [f"x{i}" for i in range(dataset.x2.shape[1])])


def load_dataset(directory: str) -> SyntheticDataset:
    import json
    import os

    with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("kind") != "unisca-dataset":
        raise ValidationError(f"{directory} is not a dataset directory")
    get = lambda name: matio.read_matrix(directory, name)[0]
    a1, a2 = get("A1"), get("A2")
    mixing = MixingModel(a1, a2, homogeneous=bool(manifest.get("homogeneous", False)))
    latent = (LatentSpec.from_dict(manifest["latent"])
              if manifest.get("latent") else None)
    return SyntheticDataset(
        x1=get("X1"), x2=get("X2"), c=get("C"), p1=get("P1"), p2=get("P2"),
        alignment=get("alignment").reshape(-1).astype(np.int64),
        x1_test=get("X1_test"), x2_test=get("X2_test"), c_test=get("C_test"),
        mixing=mixing, mean1=get("mean1").reshape(-1), mean2=get("mean2").reshape(-1),
        latent=latent,
    )
