"""Small dense embedding network with exact analytic gradients.

The encoder maps input vectors to L2-normalized embeddings through a stack of
affine layers: tanh after every hidden layer, plain affine at the output, then
optional normalization onto the unit sphere. Backpropagation is written out by
hand (including the normalization Jacobian) so gradients agree with central
finite differences to high precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class EncoderParams:
    """Weights and biases of the embedding network.

    Attributes:
        layer_dims: Layer widths from input to output, length >= 2.
        weights: weights[l] has shape (layer_dims[l+1], layer_dims[l]).
        biases: biases[l] has shape (layer_dims[l+1],).
        normalize: Whether forward output is projected to the unit sphere.
    """

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    normalize: bool = True

    def __post_init__(self):
        if len(self.layer_dims) < 2:
            raise ShapeError("layer_dims needs at least an input and an output width")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("weights/biases count does not match layer_dims")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_dims[l + 1], self.layer_dims[l])
            if w.shape != expect:
                raise ShapeError(f"weights[{l}] has shape {w.shape}, expected {expect}")
            if b.shape != (self.layer_dims[l + 1],):
                raise ShapeError(f"biases[{l}] has shape {b.shape}, expected ({self.layer_dims[l + 1]},)")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def embedding_dim(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            layer_dims=list(self.layer_dims),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            normalize=self.normalize,
        )


@dataclass
class EncoderGrads:
    """Gradient of a scalar loss with respect to every weight and bias."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class Embedding:
    """A single encoder output.

    ``degenerate`` marks the rare case where the pre-normalization output was
    exactly zero; the vector is then returned unnormalized instead of dividing
    by zero.
    """

    vector: np.ndarray
    degenerate: bool = False

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))


def init_params(layer_dims: list[int], rng: np.random.Generator, normalize: bool = True) -> EncoderParams:
    """Draw fresh parameters, uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].

    Args:
        layer_dims: Layer widths from input to output.
        rng: Stream to draw from; the same stream always yields the same net.
        normalize: Whether the encoder normalizes its output.
    """
    weights = []
    biases = []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-limit, limit, size=fan_out))
    return EncoderParams(list(layer_dims), weights, biases, normalize)


def _forward_trace(params: EncoderParams, x: np.ndarray):
    """Run the forward pass keeping every layer activation.

    Returns (activations, pre_norm, out, radii) where activations[l] is the
    input to layer l, pre_norm is the output-layer result before
    normalization, out is the final embedding matrix and radii the
    pre-normalization row norms (ones when normalization is off).
    """
    activations = [x]
    h = x
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        h = np.tanh(h @ w.T + b)
        activations.append(h)
    pre = h @ params.weights[-1].T + params.biases[-1]
    if params.normalize:
        radii = np.linalg.norm(pre, axis=1)
        out = pre.copy()
        nonzero = radii > 0.0
        out[nonzero] /= radii[nonzero, None]
    else:
        radii = np.ones(len(pre))
        out = pre
    return activations, pre, out, radii


def embed_batch(params: EncoderParams, inputs: np.ndarray) -> np.ndarray:
    """Encode a batch of input rows into embedding rows."""
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != params.input_dim:
        raise ShapeError(f"expected inputs of shape (n, {params.input_dim}), got {inputs.shape}")
    _, _, out, _ = _forward_trace(params, inputs)
    return out


def forward(params: EncoderParams, x: np.ndarray) -> Embedding:
    """Encode one input vector.

    Args:
        params: Network parameters.
        x: Vector of length ``params.input_dim``.

    Returns:
        The embedding; unit norm when normalization is on, except for the
        degenerate zero pre-normalization output which is passed through
        unchanged and flagged.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (params.input_dim,):
        raise ShapeError(f"expected input of length {params.input_dim}, got shape {x.shape}")
    _, pre, out, radii = _forward_trace(params, x[None, :])
    degenerate = bool(params.normalize and radii[0] == 0.0)
    return Embedding(vector=out[0], degenerate=degenerate)


def backward(params: EncoderParams, inputs: np.ndarray, upstream: np.ndarray) -> EncoderGrads:
    """Exact gradient of a scalar loss through the encoder.

    Args:
        params: Network parameters.
        inputs: Batch of input rows, shape (n, input_dim).
        upstream: dLoss/dEmbedding for each row, shape (n, embedding_dim).

    Returns:
        Per-parameter gradients summed over the batch, so k identical rows
        with identical upstream gradients contribute k times the
        single-row gradient.
    """
    inputs = np.asarray(inputs, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != params.input_dim:
        raise ShapeError(f"expected inputs of shape (n, {params.input_dim}), got {inputs.shape}")
    if upstream.shape != (len(inputs), params.embedding_dim):
        raise ShapeError(
            f"expected upstream of shape ({len(inputs)}, {params.embedding_dim}), got {upstream.shape}"
        )

    activations, _, out, radii = _forward_trace(params, inputs)

    if params.normalize:
        # d(pre/r)/d(pre) = (I - y y^T) / r with y the normalized output.
        g = upstream.copy()
        nonzero = radii > 0.0
        inner = np.sum(upstream * out, axis=1)
        g[nonzero] = (upstream[nonzero] - inner[nonzero, None] * out[nonzero]) / radii[nonzero, None]
    else:
        g = upstream

    n_layers = len(params.weights)
    grad_w = [np.empty(0)] * n_layers
    grad_b = [np.empty(0)] * n_layers

    grad_w[-1] = g.T @ activations[-1]
    grad_b[-1] = g.sum(axis=0)
    gh = g @ params.weights[-1]
    for l in range(n_layers - 2, -1, -1):
        ga = gh * (1.0 - activations[l + 1] ** 2)
        grad_w[l] = ga.T @ activations[l]
        grad_b[l] = ga.sum(axis=0)
        gh = ga @ params.weights[l]
    return EncoderGrads(grad_w, grad_b)


def sgd_step(params: EncoderParams, grads: EncoderGrads, learning_rate: float) -> EncoderParams:
    """One plain gradient-descent update, returning new parameters.

    Raises:
        NumericError: if any gradient or updated parameter is non-finite.
    """
    new_w = []
    new_b = []
    for w, b, gw, gb in zip(params.weights, params.biases, grads.weights, grads.biases):
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise NumericError("non-finite gradient in sgd_step")
        new_w.append(w - learning_rate * gw)
        new_b.append(b - learning_rate * gb)
    for w, b in zip(new_w, new_b):
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NumericError("non-finite parameter after sgd_step")
    return EncoderParams(list(params.layer_dims), new_w, new_b, params.normalize)


def params_to_dict(params: EncoderParams) -> dict:
    """Checkpoint payload with row-major weight arrays."""
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "layer_dims": list(params.layer_dims),
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "normalize": params.normalize,
    }


def params_from_dict(payload: dict) -> EncoderParams:
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ShapeError(f"unsupported checkpoint format_version {payload.get('format_version')!r}")
    return EncoderParams(
        layer_dims=[int(d) for d in payload["layer_dims"]],
        weights=[np.asarray(w, dtype=float) for w in payload["weights"]],
        biases=[np.asarray(b, dtype=float) for b in payload["biases"]],
        normalize=bool(payload["normalize"]),
    )


def save_checkpoint(params: EncoderParams, path) -> None:
    """Write parameters as JSON. Floats keep full precision, so a load
    followed by a save reproduces the file bit for bit."""
    with open(path, "w") as fh:
        json.dump(params_to_dict(params), fh)


def load_checkpoint(path) -> EncoderParams:
    with open(path) as fh:
        return params_from_dict(json.load(fh))
