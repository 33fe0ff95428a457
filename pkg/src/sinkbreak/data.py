"""Synthetic dataset generation and the dataset CSV format.

Format: first line is ``# d=<d> K=<K> n=<n>``, second line a column header,
then one row per example: integer label followed by d features. Floats are
written with repr so a write/read round trip is exact.
"""

from __future__ import annotations

import numpy as np


class DatasetFormatError(ValueError):
    pass


# Per-coordinate class-center offset for blobs. Small on purpose: the whole
# point of the desk-scale data is that class margins sit a few hundredths of
# the feature range apart, inside reach of small l-inf balls.
BLOB_OFFSET = 0.03


def gen_blobs(num_classes: int, dim: int, n_per_class: int, seed: int, spread: float = 0.03):
    """Gaussian blobs separated by small per-coordinate offsets.

    Class centers sit at 0.5 +/- BLOB_OFFSET per coordinate (random sign
    patterns); spread sets the within-class noise scale, so spread=0
    collapses each class to a point. The last two coordinates carry
    class-independent jitter (range proportional to spread) that keeps the
    min-max normalization from stretching the class structure apart.
    """
    if num_classes < 2 or dim < 4 or n_per_class < 1:
        raise ValueError("need K >= 2, d >= 4, n_per_class >= 1")
    if spread < 0:
        raise ValueError("spread must be >= 0")
    rng = np.random.default_rng(seed)
    m = dim - 2
    patterns: set[tuple] = set()
    while len(patterns) < num_classes:
        patterns.add(tuple(rng.choice([-1.0, 1.0], size=m)))
    centers = 0.5 + BLOB_OFFSET * np.array(sorted(patterns))
    jitter = min(spread / BLOB_OFFSET, 1.0)
    xs, ys = [], []
    for c in range(num_classes):
        pts = np.empty((n_per_class, dim))
        pts[:, :m] = centers[c] + 0.6 * spread * rng.standard_normal((n_per_class, m))
        pts[:, m:] = 0.5 + jitter * (rng.uniform(0.0, 1.0, (n_per_class, 2)) - 0.5)
        xs.append(pts)
        ys.append(np.full(n_per_class, c, dtype=np.int64))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    lo, hi = x.min(), x.max()
    x = (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)
    return x, y


def gen_rings(num_classes: int, dim: int, n_per_class: int, seed: int, spread: float = 0.05):
    """Concentric rings in the first two dims, noise in the rest."""
    if num_classes < 2 or dim < 2 or n_per_class < 1:
        raise ValueError("need K >= 2, d >= 2, n_per_class >= 1")
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for c in range(num_classes):
        radius = (c + 1) / (num_classes + 1)
        theta = rng.uniform(0, 2 * np.pi, n_per_class)
        pts = spread * rng.standard_normal((n_per_class, dim))
        pts[:, 0] += radius * np.cos(theta)
        pts[:, 1] += radius * np.sin(theta)
        xs.append(pts)
        ys.append(np.full(n_per_class, c, dtype=np.int64))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    lo, hi = x.min(), x.max()
    x = (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)
    return x, y


GENERATORS = {"blobs": gen_blobs, "rings": gen_rings}


def save_dataset(path: str, xs: np.ndarray, ys: np.ndarray, num_classes: int) -> None:
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.int64)
    d = xs.shape[1]
    with open(path, "w") as f:
        f.write(f"# d={d} K={num_classes} n={len(xs)}\n")
        f.write("label," + ",".join(f"x{i}" for i in range(d)) + "\n")
        for x, y in zip(xs, ys):
            f.write(f"{int(y)}," + ",".join(repr(float(v)) for v in x) + "\n")


def load_dataset(path: str) -> tuple[np.ndarray, np.ndarray, int]:
    """Returns (features, labels, K); validates header counts and ranges."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].startswith("# "):
        raise DatasetFormatError(f"{path}: missing '# d=.. K=.. n=..' header")
    try:
        meta = dict(kv.split("=") for kv in lines[0][2:].split())
        d, k, n = int(meta["d"]), int(meta["K"]), int(meta["n"])
    except (ValueError, KeyError) as e:
        raise DatasetFormatError(f"{path}: bad header line: {e}") from e
    rows = lines[2:]
    if len(rows) != n:
        raise DatasetFormatError(f"{path}: header says n={n}, found {len(rows)} rows")
    xs = np.empty((n, d))
    ys = np.empty(n, dtype=np.int64)
    for i, row in enumerate(rows):
        parts = row.split(",")
        if len(parts) != d + 1:
            raise DatasetFormatError(f"{path}: row {i} has {len(parts) - 1} features, expected {d}")
        ys[i] = int(parts[0])
        xs[i] = [float(p) for p in parts[1:]]
        if not 0 <= ys[i] < k:
            raise DatasetFormatError(f"{path}: row {i} label {ys[i]} outside 0..{k - 1}")
    if not np.all(np.isfinite(xs)):
        raise DatasetFormatError(f"{path}: non-finite feature values")
    return xs, ys, k
