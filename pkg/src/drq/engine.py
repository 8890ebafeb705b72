"""Decision region quantification: calibrate, explore, quantify, decide."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import AttackConfig, fmn_calibrate_batch, keyed_rng, pgd_targeted, pgd_untargeted
from .geometry import Norm, NormBall, sample_ball
from .network import DenseNetwork, confidences, forward, softmax_confidences

_RAND_EXPLORE, _RAND_QUANT = 11, 12


class ExplorationError(RuntimeError):
    """Not even the originally predicted class produced a qualifying point."""


@dataclass(frozen=True)
class DrqConfig:
    alpha: float = 0.5
    # None selects the per-sample policy: c = f(x) of the input itself
    confidence_threshold: float | None = 0.5
    fixed_epsilon_p: float | None = None
    p: Norm = Norm.LINF
    top_k: int | None = None
    exploration_iterations: int = 20
    quantification_iterations: int = 20
    calibration_max_iterations: int = 100
    box: tuple[float, float] | None = None
    max_radius: float = np.inf
    step_factor: float = 2.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "p", Norm.parse(self.p))
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        c = self.confidence_threshold
        if c is not None and not 0.0 <= c < 1.0:
            raise ValueError("confidence threshold must lie in [0, 1)")
        if self.fixed_epsilon_p is not None and self.fixed_epsilon_p <= 0:
            raise ValueError("fixed_epsilon_p must be > 0")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.exploration_iterations < 1 or self.quantification_iterations < 1:
            raise ValueError("iteration counts must be >= 1")

    def attack(self, iterations: int) -> AttackConfig:
        return AttackConfig(iterations=iterations, step_factor=self.step_factor, seed=self.seed)

    def with_(self, **changes) -> "DrqConfig":
        return replace(self, **changes)


@dataclass
class DrqResult:
    epsilon_p: float
    explored: dict[int, tuple[np.ndarray, float]]
    robust_confidence: dict[int, float]
    quantified_points: dict[int, np.ndarray]
    label: int
    standard_label: int
    calibrated: bool = True
    extras: dict = field(default_factory=dict)

    @property
    def winning_point(self) -> np.ndarray | None:
        """Quantified point of the winning class."""
        return self.quantified_points.get(self.label)


def _thresholds(net, X, cfg: DrqConfig) -> np.ndarray:
    if cfg.confidence_threshold is not None:
        return np.full(len(X), cfg.confidence_threshold)
    return np.minimum(confidences(net, X).max(axis=1), 1.0 - 1e-9)


def calibrate_batch(net: DenseNetwork, X, cfg: DrqConfig) -> np.ndarray:
    """Vicinity radius per row; +inf where the search failed."""
    X = np.atleast_2d(X)
    if cfg.fixed_epsilon_p is not None:
        return np.full(len(X), float(cfg.fixed_epsilon_p))
    _, eps, found = fmn_calibrate_batch(
        net, X, _thresholds(net, X, cfg), cfg.p, cfg.calibration_max_iterations,
        box=cfg.box, max_radius=cfg.max_radius,
    )
    return np.where(found, eps, np.inf)


def calibrate(net: DenseNetwork, x, cfg: DrqConfig) -> float:
    """epsilon_p for one input (FMN search, or the fixed value when configured)."""
    from .attacks import CalibrationError

    eps = calibrate_batch(net, np.asarray(x)[None, :], cfg)[0]
    if not np.isfinite(eps):
        raise CalibrationError("calibration found no confidently misclassified point")
    return float(eps)


def candidate_classes(logits, top_k: int | None) -> list[int]:
    """Classes to explore: the top-k logits together with the predicted class."""
    logits = np.asarray(logits)
    pred = int(np.argmax(logits))
    if top_k is None or top_k >= len(logits):
        return list(range(len(logits)))
    order = np.argsort(-logits, kind="stable")[:top_k]
    return sorted(set(int(i) for i in order) | {pred})


def _explore_rows(net, centers, classes, radii, cfg, ids):
    ball = NormBall(cfg.p, centers, radii, cfg.box)
    pts = pgd_targeted(net, centers, classes, ball, cfg.attack(cfg.exploration_iterations),
                       require_label=True, sample_ids=ids)
    probs = softmax_confidences(forward(net, pts))
    rows = np.arange(len(classes))
    return pts, probs[rows, classes], np.argmax(probs, axis=1) == classes


def _quantify_rows(net, starts, classes, radii, cfg, ids):
    ball = NormBall(cfg.p, starts, radii, cfg.box)
    pts = pgd_untargeted(net, starts, classes, ball, cfg.attack(cfg.quantification_iterations),
                         sample_ids=ids)
    probs = softmax_confidences(forward(net, pts))
    return pts, probs[np.arange(len(classes)), classes]


def _random_explore_rows(net, centers, classes, radii, cfg, ids, n_random, seed):
    pts = np.empty_like(centers)
    conf = np.empty(len(classes))
    ok = np.zeros(len(classes), dtype=bool)
    for r in range(len(classes)):
        ball = NormBall(cfg.p, centers[r], float(radii[r]), cfg.box)
        cand = np.vstack([centers[r], sample_ball(ball, n_random, keyed_rng(seed, ids[r], _RAND_EXPLORE))])
        probs = softmax_confidences(forward(net, cand))
        mask = np.argmax(probs, axis=1) == classes[r]
        if mask.any():
            score = np.where(mask, probs[:, classes[r]], -np.inf)
            k = int(np.argmax(score))
            pts[r], conf[r], ok[r] = cand[k], probs[k, classes[r]], True
        else:
            pts[r], conf[r] = centers[r], probs[0, classes[r]]
    return pts, conf, ok


def _random_quantify_rows(net, starts, classes, radii, cfg, ids, n_random, seed):
    pts = np.empty_like(starts)
    conf = np.empty(len(classes))
    for r in range(len(classes)):
        ball = NormBall(cfg.p, starts[r], float(radii[r]), cfg.box)
        cand = np.vstack([starts[r], sample_ball(ball, n_random, keyed_rng(seed, ids[r], _RAND_QUANT))])
        probs = softmax_confidences(forward(net, cand))[:, classes[r]]
        k = int(np.argmin(probs))
        pts[r], conf[r] = cand[k], probs[k]
    return pts, conf


def drq_predict_batch(net: DenseNetwork, X, cfg: DrqConfig, *, sample_ids=None,
                      explore_mode: str = "gradient", quantify_mode: str = "gradient",
                      n_random: int = 20, random_seed: int = 0) -> list[DrqResult]:
    """DRQ for every row of ``X``; results are ordered like the input.

    Inputs whose calibration fails keep their standard label and report
    ``epsilon_p = inf``.
    """
    for mode in (explore_mode, quantify_mode):
        if mode not in ("gradient", "random"):
            raise ValueError(f"unknown mode {mode!r}")
    if n_random < 1:
        raise ValueError("n_random must be >= 1")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = len(X)
    C = net.class_count
    ids = np.arange(n) if sample_ids is None else np.asarray(sample_ids)
    logits = forward(net, X)
    standard = np.argmax(logits, axis=1)
    eps = calibrate_batch(net, X, cfg)

    owner, classes = [], []
    for s in range(n):
        if np.isfinite(eps[s]):
            for i in candidate_classes(logits[s], cfg.top_k):
                owner.append(s)
                classes.append(i)
    owner = np.asarray(owner, dtype=np.intp)
    classes = np.asarray(classes, dtype=np.intp)
    row_ids = ids[owner] * C + classes if len(owner) else owner

    results = [
        DrqResult(float(eps[s]), {}, {}, {}, int(standard[s]), int(standard[s]), calibrated=bool(np.isfinite(eps[s])))
        for s in range(n)
    ]
    if len(owner) == 0:
        return results

    centers, radii = X[owner], eps[owner]
    if explore_mode == "gradient":
        x_tilde, f_tilde, ok = _explore_rows(net, centers, classes, radii, cfg, row_ids)
    else:
        x_tilde, f_tilde, ok = _random_explore_rows(net, centers, classes, radii, cfg, row_ids,
                                                    n_random, random_seed)
    keep = np.flatnonzero(ok)
    q_radii = cfg.alpha * radii[keep]
    if quantify_mode == "gradient":
        x_hat, r = _quantify_rows(net, x_tilde[keep], classes[keep], q_radii, cfg, row_ids[keep])
    else:
        x_hat, r = _random_quantify_rows(net, x_tilde[keep], classes[keep], q_radii, cfg,
                                         row_ids[keep], n_random, random_seed)

    for j, row in enumerate(keep):
        res = results[owner[row]]
        i = int(classes[row])
        res.explored[i] = (x_tilde[row], float(f_tilde[row]))
        res.robust_confidence[i] = float(r[j])
        res.quantified_points[i] = x_hat[j]
    for s, res in enumerate(results):
        if not res.calibrated:
            continue
        if not res.robust_confidence:
            raise ExplorationError(f"sample {ids[s]}: no class produced a qualifying point")
        res.label = max(sorted(res.robust_confidence), key=lambda i: (res.robust_confidence[i], -i))
    return results


def explore(net: DenseNetwork, x, epsilon_p: float, classes, cfg: DrqConfig) -> dict[int, tuple[np.ndarray, float]]:
    """Per-class highest-confidence point in B_p(x; epsilon_p) carrying that label.

    The originally predicted class is always added to ``classes``.
    """
    x = np.asarray(x, dtype=np.float64)
    cls = sorted(set(int(i) for i in classes) | {int(np.argmax(forward(net, x)))})
    k = len(cls)
    pts, conf, ok = _explore_rows(net, np.tile(x, (k, 1)), np.asarray(cls), np.full(k, float(epsilon_p)),
                                  cfg, np.asarray(cls))
    out = {c: (pts[j], float(conf[j])) for j, c in enumerate(cls) if ok[j]}
    if not out:
        raise ExplorationError("no class produced a qualifying point")
    return out


def quantify(net: DenseNetwork, x_tilde, class_i: int, alpha: float, epsilon_p: float, cfg: DrqConfig):
    """Minimum f_i over B_p(x_tilde; alpha * epsilon_p); returns ``(r_i, x_hat)``."""
    if alpha * epsilon_p < 0:
        raise ValueError("alpha * epsilon_p must be non-negative")
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    pts, r = _quantify_rows(net, x_tilde[None, :], np.array([class_i]), np.array([alpha * epsilon_p]),
                            cfg, np.array([class_i]))
    return float(r[0]), pts[0]


def drq_predict(net: DenseNetwork, x, cfg: DrqConfig, *, sample_id: int = 0) -> DrqResult:
    return drq_predict_batch(net, np.asarray(x)[None, :], cfg, sample_ids=[sample_id])[0]


def drq_predict_ablated(net: DenseNetwork, x, cfg: DrqConfig, explore_mode: str = "gradient",
                        quantify_mode: str = "gradient", n_random: int = 20, seed: int = 0,
                        *, sample_id: int = 0) -> DrqResult:
    """DRQ with either step optionally replaced by uniform random sampling."""
    return drq_predict_batch(net, np.asarray(x)[None, :], cfg, sample_ids=[sample_id],
                             explore_mode=explore_mode, quantify_mode=quantify_mode,
                             n_random=n_random, random_seed=seed)[0]


def drq_cosine_diagnostic(x, x_hat_drq, x_adv) -> float:
    """Cosine between the DRQ correction and the adversarial perturbation.

    The correction is measured from the attacked input DRQ received
    (``x_hat_drq - x_adv``); the perturbation is ``x_adv - x``.
    """
    g_drq = np.asarray(x_hat_drq, dtype=np.float64) - np.asarray(x_adv, dtype=np.float64)
    g_adv = np.asarray(x_adv, dtype=np.float64) - np.asarray(x, dtype=np.float64)
    a, b = np.linalg.norm(g_drq), np.linalg.norm(g_adv)
    if a < 1e-12 or b < 1e-12:
        raise ValueError("cosine undefined for a zero-length direction")
    return float(np.dot(g_drq, g_adv) / (a * b))
