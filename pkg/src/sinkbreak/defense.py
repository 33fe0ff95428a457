"""Desk-scale trainer for the dummy-class defense.

Training has two explicit goals: clean inputs go to their true class y, and
adversarial examples crafted against the current model go to the paired
dummy class y+K. The resulting model is the "safe sink" test subject the
attack engine is meant to break.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mlp
from .numkit import ProjectionSpec, cross_entropy, project


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.1
    eps_train: float = 0.02
    pgd_steps_train: int = 10
    lambda_dummy: float = 1.0
    hidden: tuple[int, ...] = (64, 64)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.eps_train < 0:
            raise ValueError("eps_train must be >= 0")
        if self.lambda_dummy < 0:
            raise ValueError("lambda_dummy must be >= 0")

    @property
    def pgd_stepsize_train(self) -> float:
        return self.eps_train / 4.0


def craft_training_adversary(
    model: mlp.MlpModel,
    x: np.ndarray,
    y: int,
    eps: float,
    steps: int,
    rng: np.random.Generator,
    step_size: float | None = None,
) -> np.ndarray:
    """Plain PGD ascent on cross-entropy against the true label.

    This is the conventional attacker the defense trains its sink against:
    it only tries to push probability off y, over all 2K logits.
    """
    x = np.asarray(x, dtype=np.float64)
    spec = ProjectionSpec(center=x, epsilon=eps)
    if step_size is None:
        step_size = eps / 4.0
    x_adv = project(x + rng.uniform(-eps, eps, size=x.size), spec)
    for _ in range(steps):
        z, tape = mlp.forward(model, x_adv)
        _, grad_z = cross_entropy(z, y)
        g = np.sign(mlp.input_grad(model, tape, grad_z))
        x_adv = project(x_adv + step_size * g, spec)
    return x_adv


def ducat_loss(
    model: mlp.MlpModel,
    x: np.ndarray,
    y: int,
    x_adv: np.ndarray,
    lambda_dummy: float,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """CE(f(x), y) + lambda * CE(f(x_adv), y+K), with parameter gradients."""
    k = model.num_classes
    z_clean, tape_clean = mlp.forward(model, x)
    loss_clean, grad_clean = cross_entropy(z_clean, y)
    gw, gb = mlp.param_grad(model, tape_clean, grad_clean)
    loss = loss_clean
    if lambda_dummy > 0:
        z_adv, tape_adv = mlp.forward(model, x_adv)
        loss_adv, grad_adv = cross_entropy(z_adv, y + k)
        gw_adv, gb_adv = mlp.param_grad(model, tape_adv, grad_adv)
        loss += lambda_dummy * loss_adv
        gw = [a + lambda_dummy * b for a, b in zip(gw, gw_adv)]
        gb = [a + lambda_dummy * b for a, b in zip(gb, gb_adv)]
    return float(loss), gw, gb


# -- batched minibatch machinery ------------------------------------------
# Row-parallel versions of forward/backward. Training crafts an adversary
# for every example in a batch, which is far too slow example-by-example;
# the per-example ops stay the reference implementations.


def _forward_batch(model: mlp.MlpModel, X: np.ndarray):
    acts = [X]
    pres = []
    H = X
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        Z = H @ w.T + b
        pres.append(Z)
        if i < model.depth - 1:
            H = np.maximum(Z, 0.0)
            acts.append(H)
    return pres[-1], (pres, acts)


def _input_grad_batch(model: mlp.MlpModel, pres, G: np.ndarray) -> np.ndarray:
    delta = G
    for i in range(model.depth - 1, -1, -1):
        if i < model.depth - 1:
            delta = delta * (pres[i] > 0)
        delta = delta @ model.weights[i]
    return delta


def _param_grad_batch(model: mlp.MlpModel, pres, acts, G: np.ndarray):
    grad_w = [None] * model.depth
    grad_b = [None] * model.depth
    delta = G
    for i in range(model.depth - 1, -1, -1):
        if i < model.depth - 1:
            delta = delta * (pres[i] > 0)
        grad_w[i] = delta.T @ acts[i]
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ model.weights[i]
    return grad_w, grad_b


def _softmax_rows(Z: np.ndarray) -> np.ndarray:
    E = np.exp(Z - Z.max(axis=1, keepdims=True))
    return E / E.sum(axis=1, keepdims=True)


def _ce_grad_rows(Z: np.ndarray, labels: np.ndarray) -> np.ndarray:
    G = _softmax_rows(Z)
    G[np.arange(len(labels)), labels] -= 1.0
    return G


def _craft_batch(
    model: mlp.MlpModel,
    X: np.ndarray,
    ys: np.ndarray,
    eps: float,
    steps: int,
    step_size: float,
    rng: np.random.Generator,
) -> np.ndarray:
    lo = np.maximum(X - eps, 0.0)
    hi = np.minimum(X + eps, 1.0)
    X_adv = np.clip(X + rng.uniform(-eps, eps, X.shape), lo, hi)
    for _ in range(steps):
        Z, (pres, _) = _forward_batch(model, X_adv)
        G = _ce_grad_rows(Z, ys)
        X_adv = np.clip(X_adv + step_size * np.sign(_input_grad_batch(model, pres, G)), lo, hi)
    return X_adv


def clean_accuracy(model: mlp.MlpModel, xs: np.ndarray, ys: np.ndarray) -> float:
    Z, _ = _forward_batch(model, np.asarray(xs, dtype=np.float64))
    raw = Z.argmax(axis=1)
    pred = np.where(raw < model.num_classes, raw, raw - model.num_classes)
    return float(np.mean(pred == np.asarray(ys)))


def dummy_capture_rate(
    model: mlp.MlpModel,
    xs: np.ndarray,
    ys: np.ndarray,
    eps: float,
    steps: int,
    rng: np.random.Generator,
) -> float:
    """Fraction of fresh PGD-CE training adversaries whose raw argmax is y+K."""
    k = model.num_classes
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.int64)
    X_adv = _craft_batch(model, xs, ys, eps, steps, eps / 4.0, rng)
    Z, _ = _forward_batch(model, X_adv)
    return float(np.mean(Z.argmax(axis=1) == ys + k))


def _fold_standardizer(model: mlp.MlpModel, mu: np.ndarray, sd: np.ndarray) -> mlp.MlpModel:
    """Absorb the affine input standardization into the first layer.

    The returned model consumes raw [0,1] features and is logit-identical to
    running the given model on (x - mu) / sd.
    """
    folded = model.copy()
    folded.weights[0] = model.weights[0] / sd
    folded.biases[0] = model.biases[0] - model.weights[0] @ (mu / sd)
    return folded


def train(
    xs: np.ndarray,
    ys: np.ndarray,
    num_classes: int,
    config: TrainConfig,
    log=None,
) -> mlp.MlpModel:
    """Minibatch SGD over the two-goal objective. Deterministic given the seed.

    Adversaries are re-crafted against the current model every epoch, so the
    sink stays adaptive to the attacker it is trained against. SGD runs in
    per-feature standardized coordinates (plain SGD stalls on small-margin
    raw features); the standardizer is folded into the first layer, so the
    returned model takes raw inputs and adversaries are crafted in the raw
    domain throughout.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.int64)
    if len(xs) == 0:
        raise ValueError("empty dataset")
    mu = xs.mean(axis=0)
    sd = np.maximum(xs.std(axis=0), 1e-8)
    xs_std = (xs - mu) / sd
    model = mlp.init_model(xs.shape[1], list(config.hidden), num_classes, config.seed)
    rng = np.random.default_rng(config.seed + 1)

    n = len(xs)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            X, Y = xs[idx], ys[idx]
            raw_view = _fold_standardizer(model, mu, sd)
            X_adv = _craft_batch(
                raw_view, X, Y, config.eps_train, config.pgd_steps_train,
                config.pgd_stepsize_train, rng,
            )
            Z, (pres, acts) = _forward_batch(model, xs_std[idx])
            gw, gb = _param_grad_batch(model, pres, acts, _ce_grad_rows(Z, Y))
            if config.lambda_dummy > 0:
                Za, (pres_a, acts_a) = _forward_batch(model, (X_adv - mu) / sd)
                gwa, gba = _param_grad_batch(
                    model, pres_a, acts_a, _ce_grad_rows(Za, Y + num_classes)
                )
                gw = [g + config.lambda_dummy * ga for g, ga in zip(gw, gwa)]
                gb = [g + config.lambda_dummy * ga for g, ga in zip(gb, gba)]
            scale = config.learning_rate / len(idx)
            for w, g in zip(model.weights, gw):
                w -= scale * g
            for b, g in zip(model.biases, gb):
                b -= scale * g
        if log is not None:
            model_raw = _fold_standardizer(model, mu, sd)
            acc = clean_accuracy(model_raw, xs, ys)
            cap = dummy_capture_rate(
                model_raw, xs, ys, config.eps_train, config.pgd_steps_train,
                np.random.default_rng(config.seed + 2),
            )
            log(f"epoch {epoch + 1}/{config.epochs}: clean_acc={acc:.4f} dummy_capture={cap:.4f}")
    return _fold_standardizer(model, mu, sd)
