"""Shared helpers for the test suite."""

import numpy as np
import pytest

from cotier.encoder import EncoderParams, init_params


def identity_encoder(dim: int) -> EncoderParams:
    """Single affine layer with identity weights, so embeddings equal inputs."""
    return EncoderParams(
        layer_dims=[dim, dim],
        weights=[np.eye(dim)],
        biases=[np.zeros(dim)],
        normalize=False,
    )


def random_params(layer_dims, seed, normalize=True) -> EncoderParams:
    return init_params(list(layer_dims), np.random.default_rng(seed), normalize=normalize)


def params_equal(a: EncoderParams, b: EncoderParams) -> bool:
    if a.layer_dims != b.layer_dims or a.normalize != b.normalize:
        return False
    return all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights)) and all(
        np.array_equal(x, y) for x, y in zip(a.biases, b.biases)
    )


def blob_points(rng, n_blobs, per_blob, dim, spread=0.05, sep=4.0):
    """Well-separated Gaussian blobs plus their blob index per row."""
    centers = rng.normal(size=(n_blobs, dim)) * sep
    points = np.concatenate([c + rng.normal(size=(per_blob, dim)) * spread for c in centers])
    labels = np.repeat(np.arange(n_blobs), per_blob)
    return points, labels


def planted_noise_tier():
    """Tier of 32 samples where half carry contradicted pseudo labels.

    Four pseudo labels sit at separated 2-d centers; each contributes four
    clean samples at its own center and four planted ones at a shared junk
    location far from every center. A planted sample's nearest different-label
    sample is another planted one right next to it, so its selection score
    exceeds every clean score by roughly the center separation.

    Returns (tier, clean_positions, planted_positions); embeddings equal
    inputs under the identity encoder.
    """
    from cotier.coteach import TierView

    gen = np.random.default_rng(99)
    centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]])
    junk = np.array([30.0, 30.0])
    rows = []
    labels = []
    planted = []
    for label, center in enumerate(centers):
        for _ in range(4):
            rows.append(center + gen.uniform(-0.01, 0.01, size=2))
            labels.append(label)
        for _ in range(4):
            planted.append(len(rows))
            rows.append(junk + gen.uniform(-0.01, 0.01, size=2))
            labels.append(label)
    tier = TierView(
        indices=np.arange(len(rows)),
        inputs=np.array(rows),
        labels=np.array(labels),
    )
    planted = np.array(planted)
    clean = np.setdiff1d(np.arange(len(rows)), planted)
    return tier, clean, planted


@pytest.fixture
def rng():
    return np.random.default_rng(0)
