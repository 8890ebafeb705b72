"""Constrained iterative attacks on a DenseNetwork.

All routines accept one point (``ball.center`` of shape ``(d,)``) or a batch
(``(n, d)``). Randomness is drawn from generators keyed by
``(seed, sample_id, iteration, ...)`` so results do not depend on batch
composition or execution order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import Norm, NormBall, ascent_direction, norm, project, sample_ball
from .network import DenseNetwork, confidences, confidences_and_gradient, forward, softmax_confidences

# stream tags for keyed generators
_START, _EOT, _RANDOM = 1, 2, 3


class CalibrationError(RuntimeError):
    """No confidently misclassified point was found within the search budget."""


@dataclass(frozen=True)
class AttackConfig:
    iterations: int = 20
    step_size: float | None = None
    deterministic_start: bool = True
    seed: int = 0
    step_factor: float = 2.5

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be > 0")

    def step_for(self, radius) -> np.ndarray:
        """Absolute step length; defaults to step_factor * radius / iterations."""
        radius = np.asarray(radius, dtype=np.float64)
        if self.step_size is not None:
            return np.full(radius.shape, float(self.step_size))
        return self.step_factor * radius / self.iterations


@dataclass(frozen=True)
class EotConfig:
    """Noise model for gradient averaging.

    ``inner_iterations == 0`` draws uniform noise in the noise ball;
    otherwise each replica is an inner PGD adversary of that many steps.
    """

    noise_samples: int = 10
    inner_iterations: int = 0
    noise_radius: float | None = None

    def __post_init__(self):
        if self.noise_samples < 1:
            raise ValueError("noise_samples must be >= 1")
        if self.inner_iterations < 0:
            raise ValueError("inner_iterations must be >= 0")


PGD_NOISE = EotConfig(noise_samples=10, inner_iterations=0)
PGD_ATTACK = EotConfig(noise_samples=4, inner_iterations=7)


def keyed_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *(int(k) for k in keys)])


def _batched(ball: NormBall, classes, sample_ids):
    center = np.atleast_2d(ball.center)
    n = center.shape[0]
    radius = np.broadcast_to(np.asarray(ball.radius, dtype=np.float64), (n,)).copy()
    cls = np.broadcast_to(np.asarray(classes, dtype=np.intp), (n,)).copy()
    ids = np.arange(n) if sample_ids is None else np.broadcast_to(np.asarray(sample_ids), (n,))
    return NormBall(ball.p, center, radius, ball.box), cls, ids, ball.center.ndim == 1


def _start_points(bball: NormBall, cfg: AttackConfig, ids) -> np.ndarray:
    if cfg.deterministic_start:
        return project(bball.center.copy(), bball)
    starts = np.empty_like(bball.center)
    for r in range(len(starts)):
        one = NormBall(bball.p, bball.center[r], float(bball.radius[r]), bball.box)
        starts[r] = sample_ball(one, 1, keyed_rng(cfg.seed, ids[r], _START))[0]
    return project(starts, bball)


def _run_pgd(net, bball, cls, cfg, ids, *, targeted, require_label=False,
             gradient: Callable | None = None) -> np.ndarray:
    """Shared PGD loop with best-so-far tracking.

    Targeted runs descend CE(., cls) and keep the iterate with the highest
    f_cls; untargeted runs ascend it and keep the lowest f_cls.
    """
    n = len(cls)
    rows = np.arange(n)
    step = cfg.step_for(bball.radius)[:, None]
    sign = -1.0 if targeted else 1.0
    if gradient is None:
        def gradient(points, _it):
            return confidences_and_gradient(net, points, cls)

    cur = _start_points(bball, cfg, ids)
    best = cur.copy()
    best_score = np.full(n, -np.inf)
    best_valid = cur.copy()
    valid_score = np.full(n, -np.inf)

    def track(points, probs):
        score = probs[rows, cls] if targeted else -probs[rows, cls]
        better = score > best_score
        best[better] = points[better]
        best_score[better] = score[better]
        if require_label:
            ok = (np.argmax(probs, axis=1) == cls) & (score > valid_score)
            best_valid[ok] = points[ok]
            valid_score[ok] = score[ok]

    for it in range(cfg.iterations):
        probs, grad = gradient(cur, it)
        track(cur, probs)
        cur = project(cur + sign * step * ascent_direction(grad, bball.p), bball)
    track(cur, confidences(net, cur))

    if require_label:
        found = np.isfinite(valid_score)
        best[found] = best_valid[found]
    return best


def pgd_targeted(net: DenseNetwork, x, target_class, ball: NormBall,
                 cfg: AttackConfig = AttackConfig(), *, require_label=False, sample_ids=None):
    """Highest-confidence point for ``target_class`` inside ``ball``.

    With ``require_label`` only iterates actually classified as the target
    compete (falling back to the unconstrained best if none is).
    """
    bball, cls, ids, single = _batched(ball, target_class, sample_ids)
    if np.asarray(x).shape != np.asarray(ball.center).shape:
        raise ValueError("x must match the ball center")
    out = _run_pgd(net, bball, cls, cfg, ids, targeted=True, require_label=require_label)
    return out[0] if single else out


def pgd_untargeted(net: DenseNetwork, x_start, class_j, ball: NormBall,
                   cfg: AttackConfig = AttackConfig(), *, sample_ids=None):
    """Lowest-confidence point for ``class_j`` inside ``ball``."""
    bball, cls, ids, single = _batched(ball, class_j, sample_ids)
    if np.asarray(x_start).shape != np.asarray(ball.center).shape:
        raise ValueError("x_start must match the ball center")
    out = _run_pgd(net, bball, cls, cfg, ids, targeted=False)
    return out[0] if single else out


def pgd_eot(net: DenseNetwork, x, class_j, ball: NormBall, cfg: AttackConfig,
            eot: EotConfig, mode: str = "untargeted", *, sample_ids=None):
    """PGD whose step direction is the equal-weight mean of noisy gradients.

    ``mode="untargeted"`` pushes away from ``class_j``; ``"targeted"`` pulls
    towards it. Inner-PGD replicas oppose the outer objective, so the outer
    attack seeks points that stay adversarial under a local counter-attack.
    """
    if mode not in ("targeted", "untargeted"):
        raise ValueError(f"unknown mode {mode!r}")
    targeted = mode == "targeted"
    bball, cls, ids, single = _batched(ball, class_j, sample_ids)
    n, d = bball.center.shape
    reps = eot.noise_samples
    noise_r = bball.radius if eot.noise_radius is None else np.full(n, float(eot.noise_radius))
    cls_rep = np.repeat(cls, reps)
    noise_r_rep = np.repeat(noise_r, reps)
    inner_step = (cfg.step_factor * noise_r_rep / max(eot.inner_iterations, 1))[:, None]
    inner_sign = 1.0 if targeted else -1.0

    def gradient(cur, it):
        noise = np.empty((n, reps, d))
        for r in range(n):
            rng = keyed_rng(cfg.seed, ids[r], _EOT, it)
            unit = NormBall(bball.p, np.zeros(d), float(noise_r[r]))
            noise[r] = sample_ball(unit, reps, rng)
        cur_rep = np.repeat(cur, reps, axis=0)
        local = NormBall(bball.p, cur_rep, noise_r_rep, bball.box)
        pts = project(cur_rep + noise.reshape(n * reps, d), local)
        for _ in range(eot.inner_iterations):
            _, g = confidences_and_gradient(net, pts, cls_rep)
            pts = project(pts + inner_sign * inner_step * ascent_direction(g, bball.p), local)
        _, g = confidences_and_gradient(net, pts, cls_rep)
        return confidences(net, cur), g.reshape(n, reps, d).mean(axis=1)

    out = _run_pgd(net, bball, cls, cfg, ids, targeted=targeted, gradient=gradient)
    return out[0] if single else out


def random_noise_attack(net: DenseNetwork, x, ball: NormBall, n_samples: int = 1000,
                        seed: int = 0, sample_id: int = 0):
    """Uniform sampling attack.

    Returns ``(success, worst)``: whether any sample changes the prediction,
    and the sample with the lowest confidence in the original class (first
    one on ties).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    label = int(np.argmax(forward(net, x)))
    samples = sample_ball(ball, n_samples, keyed_rng(seed, sample_id, _RANDOM))
    probs = softmax_confidences(forward(net, samples))
    success = bool(np.any(np.argmax(probs, axis=1) != label))
    return success, samples[int(np.argmin(probs[:, label]))]


# -- minimum-norm calibration ----------------------------------------------

def _qualifies(probs, labels, c):
    return (np.argmax(probs, axis=1) != labels) & (probs.max(axis=1) >= c)


def _runner_up(logits, labels):
    masked = logits.copy()
    masked[np.arange(len(labels)), labels] = -np.inf
    return np.argmax(masked, axis=1)


def fmn_calibrate_batch(net: DenseNetwork, X, confidence_threshold, p, max_iterations=100, *,
                        box=None, max_radius=np.inf, refine_steps=30):
    """Batched minimum-norm search for confidently misclassified points.

    ``confidence_threshold`` may be a scalar or one value per row. Returns
    ``(points, epsilons, found)``; rows without a hit get NaN points and an
    infinite epsilon.
    """
    p = Norm.parse(p)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    rows = np.arange(n)
    c = np.broadcast_to(np.asarray(confidence_threshold, dtype=np.float64), (n,))
    if np.any(c < 0) or np.any(c >= 1):
        raise ValueError("confidence threshold must lie in [0, 1)")
    logits = forward(net, X)
    labels = np.argmax(logits, axis=1)

    # first-order guess of the distance at which the runner-up reaches the threshold
    target = _runner_up(logits, labels)
    probs, g = confidences_and_gradient(net, X, target)
    need = np.maximum(-np.log(probs[rows, target]) + np.log(np.maximum(c, 0.5)), 0.0)
    dual = np.abs(g).sum(axis=1) if p is Norm.LINF else np.linalg.norm(g, axis=1)
    eps = np.clip(need / np.maximum(dual, 1e-12), 1e-6, max_radius)

    delta = np.zeros_like(X)
    best = np.full_like(X, np.nan)
    best_norm = np.full(n, np.inf)
    for k in range(max_iterations):
        scale = 0.01 + 0.99 * 0.5 * (1.0 + np.cos(np.pi * k / max_iterations))
        cur = X + delta
        cur_logits = forward(net, cur)
        target = _runner_up(cur_logits, labels)
        _, g = confidences_and_gradient(net, cur, target)
        delta = delta - (eps * scale)[:, None] * ascent_direction(g, p)
        delta = project(X + delta, NormBall(p, X, eps, box)) - X

        cur = X + delta
        hit = _qualifies(softmax_confidences(forward(net, cur)), labels, c)
        dnorm = norm(delta, p)
        improved = hit & (dnorm < best_norm)
        best[improved] = cur[improved]
        best_norm[improved] = dnorm[improved]
        found = np.isfinite(best_norm)
        eps = np.where(hit, 0.9 * np.minimum(eps, dnorm),
                       np.where(found, np.minimum(1.1 * eps, best_norm), np.minimum(1.1 * eps, max_radius)))
        eps = np.maximum(eps, 1e-12)

    found = np.isfinite(best_norm)
    if refine_steps and np.any(found):
        # bisection along the segment from x to the best hit
        idx = np.flatnonzero(found)
        x0, x1 = X[idx], best[idx]
        lo, hi = np.zeros(len(idx)), np.ones(len(idx))
        for _ in range(refine_steps):
            mid = 0.5 * (lo + hi)
            pts = x0 + mid[:, None] * (x1 - x0)
            ok = _qualifies(softmax_confidences(forward(net, pts)), labels[idx], c[idx])
            hi = np.where(ok, mid, hi)
            lo = np.where(ok, lo, mid)
        best[idx] = x0 + hi[:, None] * (x1 - x0)
        best_norm[idx] = norm(best[idx] - x0, p)
    return best, best_norm, found


def fmn_calibrate(net: DenseNetwork, x, confidence_threshold: float, p, max_iterations=100, *,
                  box=None, max_radius=np.inf):
    """Closest point with a different label and confidence >= threshold.

    Returns ``(point, epsilon_p)``; raises CalibrationError on failure.
    """
    pts, eps, found = fmn_calibrate_batch(net, np.asarray(x)[None, :], confidence_threshold, p,
                                          max_iterations, box=box, max_radius=max_radius)
    if not found[0]:
        raise CalibrationError(
            f"no point with confidence >= {confidence_threshold} in another class "
            f"found within {max_iterations} iterations"
        )
    return pts[0], float(eps[0])
