import numpy as np
import pytest

from unisca import datagen
from unisca.numerics import substream


@pytest.fixture
def rng():
    return substream(20240, "tests", "shared")


def small_dataset(seed=5, n=3000, preset="thm1b", homogeneous=False, d1=None, d2=None):
    """A quick synthetic dataset for solver/metric tests."""
    latent, tmpl = datagen.preset(preset, substream(seed, "datagen", "preset"))
    tmpl = datagen.MixingTemplate(d1=d1, d2=d2, homogeneous=homogeneous)
    mixing = tmpl.realize(latent, substream(seed, "datagen", "mixing"))
    return datagen.generate_dataset(
        latent, mixing, n, substream(seed, "datagen", "samples"))


def independent_latents(seed=11, n=4000):
    """All-independent latent coordinates with pairwise distinct marginals."""
    latent = datagen.LatentSpec(
        shared=(datagen.DistributionSpec.mixture([(0.5, -3.0, 1.0), (0.5, 3.0, 1.0)]),
                datagen.DistributionSpec.gamma(1.0, 3.0)),
        private1=(datagen.DistributionSpec.laplace(0.0, 2.0),),
        private2=(datagen.DistributionSpec.uniform(-4.0, 4.0),),
    )
    mixing = datagen.MixingModel.random(latent, substream(seed, "datagen", "mixing"))
    return datagen.generate_dataset(
        latent, mixing, n, substream(seed, "datagen", "samples")), latent
