"""Feedforward classifier with a doubled logit head (K authentic + K dummy).

The network is a plain ReLU MLP with hand-written forward/backward passes.
The last layer has 2K outputs: indices 0..K-1 are the authentic classes,
K..2K-1 their paired dummy classes. Predictions landing in a dummy slot are
remapped to the paired authentic class.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .numkit import DimensionError, as_vec

MODEL_MAGIC = b"SINKMLP\x00"
MODEL_VERSION = 1


class ModelFormatError(ValueError):
    """Malformed model file; message includes the byte offset of the problem."""


@dataclass
class MlpModel:
    """ReLU MLP. weights[i] has shape (layer_dims[i+1], layer_dims[i])."""

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    num_classes: int

    def __post_init__(self):
        if len(self.layer_dims) < 2:
            raise ValueError("need at least an input and an output layer")
        if self.layer_dims[-1] != 2 * self.num_classes:
            raise ValueError(
                f"output dim {self.layer_dims[-1]} != 2*K = {2 * self.num_classes}"
            )
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_dims[i + 1], self.layer_dims[i])
            if w.shape != expect or b.shape != (expect[0],):
                raise DimensionError(f"layer {i}: bad parameter shapes {w.shape}, {b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite parameters")

    @property
    def depth(self) -> int:
        return len(self.weights)

    def copy(self) -> "MlpModel":
        return MlpModel(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.num_classes,
        )


@dataclass
class ForwardTape:
    """Per-layer pre-activations and inputs recorded by forward()."""

    x: np.ndarray
    pre: list[np.ndarray]  # pre-activation of every layer, incl. output
    act: list[np.ndarray]  # input to every layer (act[0] is x)


def init_model(input_dim: int, hidden: list[int], num_classes: int, seed: int) -> MlpModel:
    """Glorot-uniform init, deterministic given the seed."""
    dims = [input_dim] + list(hidden) + [2 * num_classes]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(dims, weights, biases, num_classes)


def forward(model: MlpModel, x: np.ndarray) -> tuple[np.ndarray, ForwardTape]:
    """Run the network; returns the 2K logits and the tape for backward."""
    x = as_vec(x)
    if x.size != model.layer_dims[0]:
        raise DimensionError(f"input dim {x.size} != expected {model.layer_dims[0]}")
    act = [x]
    pre = []
    h = x
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = w @ h + b
        pre.append(z)
        h = z if i == model.depth - 1 else np.maximum(z, 0.0)
        if i < model.depth - 1:
            act.append(h)
    return pre[-1].copy(), ForwardTape(x=x, pre=pre, act=act)


def input_grad(model: MlpModel, tape: ForwardTape, grad_z: np.ndarray) -> np.ndarray:
    """d(loss)/d(input) by reverse accumulation from d(loss)/d(logits)."""
    grad_z = as_vec(grad_z)
    if len(tape.pre) != model.depth or grad_z.size != model.layer_dims[-1]:
        raise DimensionError("tape/gradient does not match this model")
    delta = grad_z
    for i in range(model.depth - 1, -1, -1):
        if i < model.depth - 1:
            delta = delta * (tape.pre[i] > 0)
        delta = model.weights[i].T @ delta
    return delta


def param_grad(
    model: MlpModel, tape: ForwardTape, grad_z: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradients w.r.t. every weight matrix and bias, shapes mirroring the model."""
    grad_z = as_vec(grad_z)
    if len(tape.pre) != model.depth or grad_z.size != model.layer_dims[-1]:
        raise DimensionError("tape/gradient does not match this model")
    grad_w = [None] * model.depth
    grad_b = [None] * model.depth
    delta = grad_z
    for i in range(model.depth - 1, -1, -1):
        if i < model.depth - 1:
            delta = delta * (tape.pre[i] > 0)
        grad_w[i] = np.outer(delta, tape.act[i])
        grad_b[i] = delta.copy()
        if i > 0:
            delta = model.weights[i].T @ delta
    return grad_w, grad_b


def predict_dummy(z: np.ndarray, num_classes: int) -> tuple[int, int]:
    """Dummy-aware prediction rule.

    Takes the raw argmax over all 2K logits, then maps dummy slots back to
    their authentic class. Returns (predicted_class, raw_argmax).
    """
    z = as_vec(z)
    if z.size != 2 * num_classes:
        raise DimensionError(f"expected {2 * num_classes} logits, got {z.size}")
    raw = int(np.argmax(z))  # np.argmax takes the first max: lowest index wins ties
    return (raw if raw < num_classes else raw - num_classes), raw


def save_model(model: MlpModel, path: str) -> None:
    """Binary format: magic, version, K, depth, layer_dims, then per layer
    W (row-major) and b as little-endian float64. Documented in the README."""
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<III", MODEL_VERSION, model.num_classes, len(model.layer_dims)))
        f.write(struct.pack(f"<{len(model.layer_dims)}I", *model.layer_dims))
        for w, b in zip(model.weights, model.biases):
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path: str) -> MlpModel:
    with open(path, "rb") as f:
        blob = f.read()

    def need(n: int, offset: int, what: str) -> None:
        if offset + n > len(blob):
            raise ModelFormatError(f"truncated {what} at byte {offset}")

    off = 0
    need(len(MODEL_MAGIC), off, "magic")
    if blob[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ModelFormatError("bad magic at byte 0")
    off = len(MODEL_MAGIC)
    need(12, off, "header")
    version, k, n_dims = struct.unpack_from("<III", blob, off)
    off += 12
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported version {version} at byte {len(MODEL_MAGIC)}")
    if k < 1 or n_dims < 2:
        raise ModelFormatError(f"bad header values (K={k}, layers={n_dims}) at byte {len(MODEL_MAGIC)}")
    need(4 * n_dims, off, "layer dims")
    dims = list(struct.unpack_from(f"<{n_dims}I", blob, off))
    off += 4 * n_dims
    if any(d < 1 for d in dims):
        raise ModelFormatError(f"non-positive layer dim at byte {off - 4 * n_dims}")
    if dims[-1] != 2 * k:
        raise ModelFormatError(f"output dim {dims[-1]} != 2K at byte {off - 4}")
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        nbytes = 8 * fan_out * fan_in
        need(nbytes, off, f"layer {i} weights")
        w = np.frombuffer(blob, dtype="<f8", count=fan_out * fan_in, offset=off)
        w = w.reshape(fan_out, fan_in).copy()
        off += nbytes
        need(8 * fan_out, off, f"layer {i} bias")
        b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=off).copy()
        off += 8 * fan_out
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ModelFormatError(f"non-finite parameter in layer {i} near byte {off}")
        weights.append(w)
        biases.append(b)
    if off != len(blob):
        raise ModelFormatError(f"trailing garbage at byte {off}")
    return MlpModel(dims, weights, biases, k)
