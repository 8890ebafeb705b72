"""l2 / l-inf balls, projections and steepest-ascent directions."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class Norm(str, Enum):
    L2 = "l2"
    LINF = "linf"

    @classmethod
    def parse(cls, value) -> "Norm":
        if isinstance(value, Norm):
            return value
        key = str(value).strip().lower()
        aliases = {"2": cls.L2, "l2": cls.L2, "inf": cls.LINF, "linf": cls.LINF}
        if key not in aliases:
            raise ValueError(f"unsupported norm {value!r}; use l2 or linf")
        return aliases[key]


@dataclass(frozen=True, eq=False)
class NormBall:
    """B_p(center; radius), optionally intersected with a box [lo, hi]^d.

    ``center`` may be a batch ``(n, d)`` with ``radius`` scalar or ``(n,)``.
    """

    p: Norm
    center: np.ndarray
    radius: float | np.ndarray
    box: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "p", Norm.parse(self.p))
        center = np.asarray(self.center, dtype=np.float64)
        radius = np.asarray(self.radius, dtype=np.float64)
        if not np.all(np.isfinite(center)):
            raise ValueError("ball center must be finite")
        if np.any(radius < 0) or np.any(np.isnan(radius)):
            raise ValueError("ball radius must be non-negative")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius", float(radius) if radius.ndim == 0 else radius)

    def contains(self, point, tol=1e-9):
        return norm(np.asarray(point) - self.center, self.p) <= _radius_col(self)[..., 0] + tol


def norm(v, p):
    """l2 or l-inf norm over the last axis."""
    v = np.asarray(v, dtype=np.float64)
    if Norm.parse(p) is Norm.L2:
        out = np.sqrt(np.sum(v * v, axis=-1))
    else:
        out = np.max(np.abs(v), axis=-1) if v.shape[-1] else np.zeros(v.shape[:-1])
    return float(out) if np.ndim(out) == 0 else out


def _radius_col(ball: NormBall) -> np.ndarray:
    r = np.asarray(ball.radius, dtype=np.float64)
    return r[..., None] if r.ndim else r.reshape(1)


def _project_ball(point, ball: NormBall):
    delta = point - ball.center
    r = _radius_col(ball)
    if ball.p is Norm.LINF:
        return ball.center + np.clip(delta, -r, r)
    length = np.sqrt(np.sum(delta * delta, axis=-1, keepdims=True))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(length > r, r / length, 1.0)
    return ball.center + delta * scale


def project(point, ball: NormBall) -> np.ndarray:
    """Nearest point of the ball, then clamped into the data box if one is set.

    The ball/box alternation runs twice. It is exact for l-inf and for any
    l2 ball whose center lies in the box.
    """
    point = np.asarray(point, dtype=np.float64)
    out = _project_ball(point, ball)
    if ball.box is not None:
        lo, hi = ball.box
        for _ in range(2):
            out = np.clip(out, lo, hi)
            out = _project_ball(out, ball)
        out = np.clip(out, lo, hi)
    return out


def ascent_direction(gradient, p) -> np.ndarray:
    """Unit steepest-ascent direction in the given norm (row-wise for batches)."""
    g = np.asarray(gradient, dtype=np.float64)
    if Norm.parse(p) is Norm.LINF:
        return np.sign(g)
    length = np.sqrt(np.sum(g * g, axis=-1, keepdims=True))
    safe = np.where(length < 1e-12, 1.0, length)
    return np.where(length < 1e-12, 0.0, g / safe)


def sample_ball(ball: NormBall, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points uniform in a single (unbatched) ball, then box-clamped."""
    center = np.asarray(ball.center)
    d = center.shape[-1]
    r = float(ball.radius)
    if ball.p is Norm.LINF:
        delta = rng.uniform(-r, r, size=(n, d))
    else:
        direction = rng.standard_normal((n, d))
        direction /= np.maximum(np.linalg.norm(direction, axis=1, keepdims=True), 1e-300)
        delta = direction * (r * rng.uniform(size=(n, 1)) ** (1.0 / d))
    out = center + delta
    if ball.box is not None:
        out = np.clip(out, *ball.box)
    return out
