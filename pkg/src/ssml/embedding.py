"""Trainable embedding head: affine layers (tanh between, when a hidden
layer is requested) followed by L2 normalization, optimized by SGD with
momentum.

Forward/backward are pure given a parameter snapshot; ``sgd_step`` mutates
the model and is the single-writer operation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    NonFiniteGradientError,
    ShapeMismatchError,
    ZeroNormOutputError,
)

CHECKPOINT_MAGIC = b"SSMLMD01"

_NORM_FLOOR = 1e-12


@dataclass
class EmbeddingModel:
    """Parameters plus momentum state. weights[l] has shape (fan_out, fan_in)."""

    weights: list
    biases: list
    velocity_w: list
    velocity_b: list
    learning_rate: float = 0.01
    momentum: float = 0.9

    @property
    def d_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def d_out(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.weights)


@dataclass
class ForwardCache:
    """Activations kept for the backward pass."""

    inputs: np.ndarray          # (B, d_in)
    hiddens: list               # post-tanh activations per inner layer
    pre: np.ndarray             # (B, d_out) before normalization
    norms: np.ndarray           # (B,)
    z: np.ndarray               # (B, d_out) unit rows
    single: bool


@dataclass
class Gradients:
    weights: list
    biases: list


def init_model(
    d_in: int,
    d_out: int,
    hidden_dim: int | None = None,
    seed: int = 0,
    rng: np.random.Generator | None = None,
    learning_rate: float = 0.01,
    momentum: float = 0.9,
    dtype=np.float64,
) -> EmbeddingModel:
    """Fresh model with weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]
    and zero biases."""
    if rng is None:
        rng = np.random.default_rng(seed)
    dims = [d_in] + ([hidden_dim] if hidden_dim else []) + [d_out]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return EmbeddingModel(
        weights=weights,
        biases=biases,
        velocity_w=[np.zeros_like(w) for w in weights],
        velocity_b=[np.zeros_like(b) for b in biases],
        learning_rate=learning_rate,
        momentum=momentum,
    )


def forward(model: EmbeddingModel, x) -> tuple[np.ndarray, ForwardCache]:
    """Map inputs to unit-norm embeddings.

    Accepts one vector (d_in,) or a batch (B, d_in); the returned embedding
    matches the input's arrangement. Raises ZeroNormOutputError when any
    pre-normalization output collapses below the 1e-12 floor.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != model.d_in:
        raise ShapeMismatchError(f"input dim {X.shape[1]} != model d_in {model.d_in}")
    hiddens = []
    act = X
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        act = np.tanh(act @ W.T + b)
        hiddens.append(act)
    pre = act @ model.weights[-1].T + model.biases[-1]
    norms = np.sqrt(np.einsum("ij,ij->i", pre, pre))
    if np.any(norms <= _NORM_FLOOR):
        raise ZeroNormOutputError(
            f"pre-normalization output collapsed for row {int(np.argmin(norms))}"
        )
    z = pre / norms[:, None]
    cache = ForwardCache(inputs=X, hiddens=hiddens, pre=pre, norms=norms, z=z, single=single)
    return (z[0] if single else z), cache


def backward(model: EmbeddingModel, cache: ForwardCache, grad_wrt_z) -> Gradients:
    """Exact parameter gradients for the forward pass in ``cache``.

    Applies the normalization Jacobian (I - z z^T) / ||pre|| to the incoming
    gradient, then backpropagates through the affine (and tanh) layers.
    """
    G = np.atleast_2d(np.asarray(grad_wrt_z, dtype=np.float64))
    if G.shape != cache.z.shape:
        raise ShapeMismatchError(f"grad shape {G.shape} != embedding shape {cache.z.shape}")
    # Tangent-space projection: components along z do not change direction.
    g_pre = (G - np.einsum("ij,ij->i", G, cache.z)[:, None] * cache.z) / cache.norms[:, None]

    grads_w = [None] * model.n_layers
    grads_b = [None] * model.n_layers
    upstream = g_pre
    for l in range(model.n_layers - 1, -1, -1):
        below = cache.inputs if l == 0 else cache.hiddens[l - 1]
        grads_w[l] = upstream.T @ below
        grads_b[l] = upstream.sum(axis=0)
        if l > 0:
            upstream = (upstream @ model.weights[l]) * (1.0 - cache.hiddens[l - 1] ** 2)
    return Gradients(weights=grads_w, biases=grads_b)


def sgd_step(model: EmbeddingModel, grads: Gradients) -> None:
    """buffer <- momentum * buffer + grad; param <- param - lr * buffer."""
    for g in grads.weights + grads.biases:
        if not np.isfinite(g).all():
            raise NonFiniteGradientError("gradient contains NaN or inf")
    for W, vw, gw in zip(model.weights, model.velocity_w, grads.weights):
        vw *= model.momentum
        vw += gw
        W -= model.learning_rate * vw
    for b, vb, gb in zip(model.biases, model.velocity_b, grads.biases):
        vb *= model.momentum
        vb += gb
        b -= model.learning_rate * vb


def lr_schedule(epoch: int, base_lr: float = 0.01, decay: float = 0.1, interval: int = 10) -> float:
    """Step schedule: base_lr * decay ** floor(epoch / interval)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return base_lr * decay ** (epoch // interval)


def save_checkpoint(model: EmbeddingModel, path) -> None:
    """Write parameters then momentum buffers, each as u64 rows/cols + f32.

    Layout: magic, u32 array count, then per array dims and data; biases are
    stored as single-column matrices. Momentum buffers follow in the same
    order and layout.
    """
    params = []
    for W, b in zip(model.weights, model.biases):
        params += [W, b.reshape(-1, 1)]
    buffers = []
    for vw, vb in zip(model.velocity_w, model.velocity_b):
        buffers += [vw, vb.reshape(-1, 1)]
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(params)))
        for arr in params + buffers:
            fh.write(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(
    path, learning_rate: float = 0.01, momentum: float = 0.9, dtype=np.float64
) -> EmbeddingModel:
    """Rebuild a model (and its momentum state) from ``save_checkpoint`` output."""

    def read_array(fh):
        rows, cols = struct.unpack("<QQ", fh.read(16))
        raw = fh.read(rows * cols * 4)
        if len(raw) != rows * cols * 4:
            raise ValueError(f"{path}: truncated checkpoint")
        return np.frombuffer(raw, dtype="<f4").reshape(rows, cols).astype(dtype)

    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        (count,) = struct.unpack("<I", fh.read(4))
        if count % 2 != 0:
            raise ValueError(f"{path}: array count {count} is not weight/bias pairs")
        params = [read_array(fh) for _ in range(count)]
        buffers = [read_array(fh) for _ in range(count)]

    weights = [params[i] for i in range(0, count, 2)]
    biases = [params[i].reshape(-1) for i in range(1, count, 2)]
    velocity_w = [buffers[i] for i in range(0, count, 2)]
    velocity_b = [buffers[i].reshape(-1) for i in range(1, count, 2)]
    for W, b in zip(weights, biases):
        if W.shape[0] != b.shape[0]:
            raise ValueError(f"{path}: bias length {b.shape[0]} != fan-out {W.shape[0]}")
    for prev, nxt in zip(weights[:-1], weights[1:]):
        if nxt.shape[1] != prev.shape[0]:
            raise ValueError(f"{path}: layer dims do not chain")
    return EmbeddingModel(
        weights=weights,
        biases=biases,
        velocity_w=velocity_w,
        velocity_b=velocity_b,
        learning_rate=learning_rate,
        momentum=momentum,
    )
