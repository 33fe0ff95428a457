"""Attack losses and the iterative sign-gradient attack engine.

Losses all share one signature: take the 2K logits, return
(scalar loss, gradient w.r.t. the logits). The engine ascends whatever loss
it is given, so targeted objectives carry their own negative signs.

The engine runs projected sign-gradient ascent with a cosine step-size
schedule and a two-term momentum update, stopping early as soon as the
dummy-aware success margin goes negative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mlp
from .numkit import ProjectionSpec, StopGrad, cross_entropy, project, top2

# Floor for the detached top-2 margin; avoids dividing by an exact logit tie.
MARGIN_FLOOR = 1e-12

LOSS_KINDS = ("ce", "cw", "mifpe", "dawa", "dawa_targeted")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    iterations: int = 100
    nu: float = 0.75  # momentum factor
    c: float = 2.0  # alpha smoothing strength
    t_star: float = 1.0
    loss_kind: str = "dawa"
    target: int | None = None  # required for dawa_targeted
    seed: int = 0
    track_best: bool = True
    mu_init: str = "x0"  # "x0" or the literal-pseudocode "zero"
    schedule: str = "alg1"  # "alg1": eps*(1+cos), "sec4": 2*eps*(1+cos)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0.0 <= self.nu <= 1.0:
            raise ValueError("nu must be in [0, 1]")
        if self.c < 0:
            raise ValueError("c must be >= 0")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        if self.loss_kind == "dawa_targeted" and self.target is None:
            raise ValueError("dawa_targeted needs a target class")
        if self.mu_init not in ("x0", "zero"):
            raise ValueError("mu_init must be 'x0' or 'zero'")
        if self.schedule not in ("alg1", "sec4"):
            raise ValueError("schedule must be 'alg1' or 'sec4'")


@dataclass
class AttackResult:
    x_adv: np.ndarray
    succeeded: bool
    iterations_used: int
    margin_trace: list[float] = field(default_factory=list)
    loss_trace: list[float] = field(default_factory=list)
    tie_events: int = 0
    iterates: list[np.ndarray] = field(default_factory=list)  # one per margin eval


def margin_value(z: np.ndarray, y: int, num_classes: int) -> float:
    """Dummy-aware success margin: max(z_y, z_{y+K}) - max over other logits.

    Negative means the attack produced a functional misclassification: the
    raw argmax is neither the true class nor its paired dummy. A raw argmax
    in the dummy slot y+K remaps to y and does NOT count as success.
    """
    if num_classes < 2:
        raise ValueError("need K >= 2 so a competitor class exists")
    z = np.asarray(z, dtype=np.float64)
    if z.size != 2 * num_classes:
        raise ValueError(f"expected {2 * num_classes} logits, got {z.size}")
    keep = np.ones(z.size, dtype=bool)
    keep[y] = keep[y + num_classes] = False
    return float(max(z[y], z[y + num_classes]) - z[keep].max())


def alpha_smooth(z_y: float, z_dummy: float, c: float) -> StopGrad:
    """Smoothed selector between the true-class and dummy-class terms.

    Sigmoid of c*(z_y - z_dummy); c=0 gives a flat 0.5 and large c recovers
    the hard indicator. Detached: enters all gradients as a constant.
    """
    if c < 0:
        raise ValueError("c must be >= 0")
    d = c * (z_y - z_dummy)
    # evaluate the sigmoid on the side that cannot overflow
    if d >= 0:
        a = 1.0 / (1.0 + np.exp(-d))
    else:
        e = np.exp(d)
        a = e / (1.0 + e)
    return StopGrad(float(a))


def _detached_scale(z: np.ndarray, t_star: float) -> tuple[StopGrad, bool]:
    """t*/(top-1 - top-2 margin), frozen at its forward value.

    Returns the scale and whether the margin had to be floored (logit tie).
    """
    p1, p2 = top2(z)
    margin = float(z[p1] - z[p2])
    tied = margin < MARGIN_FLOOR
    return StopGrad(t_star / max(margin, MARGIN_FLOOR)), tied


def ce_loss(z: np.ndarray, y: int) -> tuple[float, np.ndarray]:
    """Plain cross-entropy on the raw 2K logits against the true label."""
    return cross_entropy(z, y)


def cw_margin_loss(z: np.ndarray, y: int) -> tuple[float, np.ndarray]:
    """Negative margin -(z_y - max_{i!=y} z_i); ascending it shrinks the margin."""
    z = np.asarray(z, dtype=np.float64)
    if z.size < 2:
        raise ValueError("need at least 2 logits")
    rival = None
    for i in range(z.size):
        if i != y and (rival is None or z[i] > z[rival]):
            rival = i
    grad = np.zeros_like(z)
    grad[rival] = 1.0
    grad[y] -= 1.0
    return float(z[rival] - z[y]), grad


def mifpe_loss(z: np.ndarray, y: int, t_star: float = 1.0) -> tuple[float, np.ndarray, bool]:
    """Cross-entropy of the logits rescaled by the detached top-2 margin.

    The rescale kills the floating-point gradient error that grows with the
    logit magnitude; the scale itself contributes nothing to the gradient.
    """
    scale, tied = _detached_scale(z, t_star)
    loss, grad = cross_entropy(scale.value * np.asarray(z, dtype=np.float64), y)
    return loss, scale.value * grad, tied


def dawa_loss(
    z: np.ndarray, y: int, num_classes: int, c: float, t_star: float = 1.0
) -> tuple[float, np.ndarray, bool]:
    """Adaptively weighted dual-label loss.

    alpha * CE(scaled z, y) + (1-alpha) * CE(scaled z, y+K), with alpha the
    smoothed selector on (z_y - z_{y+K}) and the scale the detached top-2
    margin. Ascending it drives probability off both the true class and its
    dummy sink at once.
    """
    z = np.asarray(z, dtype=np.float64)
    scale, tied = _detached_scale(z, t_star)
    alpha = alpha_smooth(float(z[y]), float(z[y + num_classes]), c)
    a = alpha.value
    zs = scale.value * z
    loss_y, grad_y = cross_entropy(zs, y)
    loss_d, grad_d = cross_entropy(zs, y + num_classes)
    loss = a * loss_y + (1.0 - a) * loss_d
    grad = scale.value * (a * grad_y + (1.0 - a) * grad_d)
    return float(loss), grad, tied


def dawa_targeted_loss(
    z: np.ndarray, y_t: int, num_classes: int, c: float, t_star: float = 1.0, y: int | None = None
) -> tuple[float, np.ndarray, bool]:
    """Targeted variant: pull probability toward y_t and its dummy pair.

    Both cross-entropy terms enter with negative sign, so the ascent engine
    minimizes them. alpha is computed from the target pair (z_{y_t},
    z_{y_t+K}), mirroring the labels actually being optimized.
    """
    if y is not None and y_t == y:
        raise ValueError("target class must differ from the true class")
    z = np.asarray(z, dtype=np.float64)
    scale, tied = _detached_scale(z, t_star)
    alpha = alpha_smooth(float(z[y_t]), float(z[y_t + num_classes]), c)
    a = alpha.value
    zs = scale.value * z
    loss_t, grad_t = cross_entropy(zs, y_t)
    loss_d, grad_d = cross_entropy(zs, y_t + num_classes)
    loss = -a * loss_t - (1.0 - a) * loss_d
    grad = -scale.value * (a * grad_t + (1.0 - a) * grad_d)
    return float(loss), grad, tied


def loss_and_grad(
    z: np.ndarray, y: int, num_classes: int, config: AttackConfig
) -> tuple[float, np.ndarray, bool]:
    """Dispatch on config.loss_kind; returns (loss, grad_z, tie_flag)."""
    kind = config.loss_kind
    if kind == "ce":
        loss, grad = ce_loss(z, y)
        return loss, grad, False
    if kind == "cw":
        loss, grad = cw_margin_loss(z, y)
        return loss, grad, False
    if kind == "mifpe":
        return mifpe_loss(z, y, config.t_star)
    if kind == "dawa":
        return dawa_loss(z, y, num_classes, config.c, config.t_star)
    if kind == "dawa_targeted":
        return dawa_targeted_loss(z, config.target, num_classes, config.c, config.t_star, y=y)
    raise ValueError(f"unknown loss kind {kind!r}")


def cosine_step(i: int, total: int, epsilon: float, schedule: str = "alg1") -> float:
    """Step size at iteration i: eps*(1+cos(i*pi/I)), decreasing from 2*eps."""
    if not 0 <= i < total:
        raise ValueError(f"iteration {i} outside [0, {total})")
    base = epsilon * (1.0 + np.cos(i * np.pi / total))
    return float(2.0 * base if schedule == "sec4" else base)


def attack_run(
    model: mlp.MlpModel,
    x: np.ndarray,
    y: int,
    config: AttackConfig,
    spec: ProjectionSpec | None = None,
    rng: np.random.Generator | None = None,
) -> AttackResult:
    """Run the full attack iteration against one example.

    Random start inside the ball, then per iteration: evaluate the success
    margin (early return if negative), take a sign-gradient step into the
    momentum buffer, and blend it with the previous displacement. Every
    iterate stays inside the feasible region. With track_best on, the
    returned point is the lowest-margin iterate seen.
    """
    x = np.asarray(x, dtype=np.float64)
    if spec is None:
        spec = ProjectionSpec(center=x, epsilon=config.epsilon)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    k = model.num_classes

    x_cur = project(x + rng.uniform(-config.epsilon, config.epsilon, size=x.size), spec)
    x_prev = x_cur.copy()
    mu = x_cur.copy() if config.mu_init == "x0" else np.zeros_like(x_cur)

    result = AttackResult(x_adv=x_cur.copy(), succeeded=False, iterations_used=0)
    best_margin = np.inf

    for i in range(config.iterations):
        z, tape = mlp.forward(model, x_cur)
        v = margin_value(z, y, k)
        loss, grad_z, tied = loss_and_grad(z, y, k, config)
        result.margin_trace.append(v)
        result.loss_trace.append(loss)
        result.tie_events += int(tied)
        result.iterates.append(x_cur.copy())
        if config.track_best and v < best_margin:
            best_margin = v
            result.x_adv = x_cur.copy()
        if v < 0:
            result.succeeded = True
            result.iterations_used = i
            if not config.track_best:
                result.x_adv = x_cur.copy()
            return result

        g = np.sign(mlp.input_grad(model, tape, grad_z))
        beta = cosine_step(i, config.iterations, config.epsilon, config.schedule)
        mu = project(mu + beta * g, spec)
        x_next = project(
            x_cur + config.nu * (mu - x_cur) + (1.0 - config.nu) * (x_cur - x_prev), spec
        )
        x_prev, x_cur = x_cur, x_next

    # final iterate: one last success check on what the loop would return
    z, _ = mlp.forward(model, x_cur)
    v = margin_value(z, y, k)
    result.iterates.append(x_cur.copy())
    if config.track_best and v < best_margin:
        best_margin = v
        result.x_adv = x_cur.copy()
    if not config.track_best:
        result.x_adv = x_cur.copy()
    result.succeeded = v < 0 or (config.track_best and best_margin < 0)
    result.iterations_used = config.iterations
    return result


def rank_targets(model: mlp.MlpModel, x: np.ndarray, y: int) -> list[int]:
    """Candidate targets y_t != y, by descending max(z_{y_t}, z_{y_t+K}) clean."""
    z, _ = mlp.forward(model, x)
    k = model.num_classes
    scores = [(max(z[t], z[t + k]), t) for t in range(k) if t != y]
    scores.sort(key=lambda s: (-s[0], s[1]))
    return [t for _, t in scores]


def multi_target_run(
    model: mlp.MlpModel,
    x: np.ndarray,
    y: int,
    config: AttackConfig,
    total_budget: int = 1000,
    rng: np.random.Generator | None = None,
) -> AttackResult:
    """Untargeted pass on a tenth of the budget, then targeted passes.

    Targets are ranked by their clean-logit prominence and share the
    remaining budget evenly. Stops at the first success; otherwise returns
    the best-margin example across all passes.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    k = model.num_classes
    untargeted_budget = max(1, total_budget // 10)

    base = AttackConfig(
        epsilon=config.epsilon,
        iterations=untargeted_budget,
        nu=config.nu,
        c=config.c,
        t_star=config.t_star,
        loss_kind="dawa",
        seed=config.seed,
        track_best=True,
        mu_init=config.mu_init,
        schedule=config.schedule,
    )
    best = attack_run(model, x, y, base, rng=rng)
    used = len(best.margin_trace)
    if best.succeeded:
        best.iterations_used = used
        return best
    best_v = min(best.margin_trace) if best.margin_trace else np.inf

    targets = rank_targets(model, x, y)
    remaining = max(0, total_budget - untargeted_budget)
    per_target = remaining // max(1, len(targets))
    for y_t in targets:
        if per_target == 0:
            break
        cfg = AttackConfig(
            epsilon=config.epsilon,
            iterations=per_target,
            nu=config.nu,
            c=config.c,
            t_star=config.t_star,
            loss_kind="dawa_targeted",
            target=y_t,
            seed=config.seed,
            track_best=True,
            mu_init=config.mu_init,
            schedule=config.schedule,
        )
        res = attack_run(model, x, y, cfg, rng=rng)
        used += len(res.margin_trace)
        if res.succeeded:
            res.iterations_used = used
            return res
        v = min(res.margin_trace) if res.margin_trace else np.inf
        if v < best_v:
            best_v = v
            best = res
    best.iterations_used = used
    return best
