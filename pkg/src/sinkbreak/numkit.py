"""Small dense numeric core shared by the model, training, and attack code.

Everything is float64. Vectors and matrices are plain numpy arrays; the
helpers here add the pieces numpy does not give us directly: a numerically
stable log-softmax, cross-entropy with its analytic gradient, top-2
extraction with a deterministic tie-break, the l-infinity ball projection,
and an explicit stop-gradient marker.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Shape or dimension mismatch between operands."""


def as_vec(x) -> np.ndarray:
    """Coerce to a 1-D float64 array, rejecting non-finite entries."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains NaN or Inf")
    return v


@dataclass(frozen=True)
class StopGrad:
    """A scalar frozen at its forward value: derivatives through it are zero.

    Gradients in this package are written by hand, so "detach" just means
    the wrapped value enters gradient formulas as a plain constant. Wrapping
    it in a type keeps the detached quantities visible at call sites.
    """

    value: float

    def __float__(self) -> float:
        return float(self.value)


@dataclass(frozen=True)
class ProjectionSpec:
    """Feasible region: l-inf ball of radius epsilon around center, inside [lo, hi]."""

    center: np.ndarray
    epsilon: float
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.lo > self.hi:
            raise ValueError("lo must be <= hi")
        object.__setattr__(self, "center", as_vec(self.center))


def log_softmax(z: np.ndarray) -> np.ndarray:
    """Stable log(softmax(z)) via max subtraction + log-sum-exp."""
    z = as_vec(z)
    if z.size == 0:
        raise DimensionError("log_softmax of an empty vector")
    shifted = z - z.max()
    return shifted - np.log(np.exp(shifted).sum())


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(z))


def cross_entropy(z: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy and its gradient w.r.t. the logits.

    Returns (loss, grad) with loss = -log softmax(z)[label] and
    grad = softmax(z) - onehot(label).
    """
    z = as_vec(z)
    if not 0 <= label < z.size:
        raise IndexError(f"label {label} out of range for {z.size} logits")
    logp = log_softmax(z)
    grad = np.exp(logp)
    grad[label] -= 1.0
    return -float(logp[label]), grad


def top2(z: np.ndarray) -> tuple[int, int]:
    """Indices of the two largest entries; ties broken by lower index."""
    z = as_vec(z)
    if z.size < 2:
        raise DimensionError("top2 needs at least 2 entries")
    # argsort is stable on the negated vector, so equal values keep index order
    order = np.argsort(-z, kind="stable")
    return int(order[0]), int(order[1])


def project(v: np.ndarray, spec: ProjectionSpec) -> np.ndarray:
    """Clamp componentwise to the epsilon-ball around spec.center, then to [lo, hi]."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != spec.center.shape:
        raise DimensionError(
            f"vector shape {v.shape} != center shape {spec.center.shape}"
        )
    out = np.clip(v, spec.center - spec.epsilon, spec.center + spec.epsilon)
    return np.clip(out, spec.lo, spec.hi)
