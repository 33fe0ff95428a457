import numpy as np
import pytest

from sinkbreak import data, defense, mlp


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar f at 1-D point x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def away_from_kinks(model, x, threshold=1e-3):
    """True if no hidden pre-activation is near its ReLU kink."""
    _, tape = mlp.forward(model, x)
    return all(np.abs(p).min() > threshold for p in tape.pre[:-1])


@pytest.fixture(scope="session")
def blob_data():
    xs, ys = data.gen_blobs(4, 16, 200, seed=0, spread=0.03)
    return xs, ys


@pytest.fixture(scope="session")
def defended_model(blob_data):
    """The standard desk-scale defended model used across the suite."""
    xs, ys = blob_data
    config = defense.TrainConfig(seed=0)
    return defense.train(xs, ys, 4, config)


@pytest.fixture(scope="session")
def random_model():
    """Untrained 2-hidden-layer model, d=16, K=4."""
    return mlp.init_model(16, [64, 64], 4, seed=7)
