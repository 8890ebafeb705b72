"""Binary DRQ on closed-form scalar fields u: R^d -> [0, 1], d in {1, 2}.

Ball extrema are computed in closed form where the field family allows it
(quadratic bowls, linear and linear-sigmoid fields) and by exhaustive grid
search with one local refinement pass otherwise.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .geometry import Norm, NormBall, project

CLOSED_FORM_TOL = 1e-9
GRID_TOL = 1e-4
GRID_DIVISIONS = 200

REPORT_COLUMNS = ("field_kind", "field_params", "x", "epsilon", "alpha",
                  "quantity", "bound", "measured", "passed")


class PreconditionError(ValueError):
    pass


def _fmt_vec(v) -> str:
    return ";".join(repr(float(t)) for t in np.atleast_1d(v))


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Closed-form binary classifier, clipped to [0, 1].

    kinds and parameters:
      quadratic         u0 + mu * |t - center|_2^2
      linear            w . t + b
      sigmoid           1 / (1 + exp(-(w . t + b)))
      gaussian_mixture  base + sum_k a_k exp(-|t - c_k|^2 / (2 s_k^2))
    """

    kind: str
    params: dict
    dim: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("fields are restricted to d in {1, 2}")
        if self.kind not in ("quadratic", "linear", "sigmoid", "gaussian_mixture"):
            raise ValueError(f"unknown field kind {self.kind!r}")

    def raw(self, pts) -> np.ndarray:
        t = np.asarray(pts, dtype=np.float64)
        q = self.params
        if self.kind == "quadratic":
            diff = t - q["center"]
            return q["u0"] + q["mu"] * np.sum(diff * diff, axis=-1)
        if self.kind in ("linear", "sigmoid"):
            z = t @ q["w"] + q["b"]
            return z if self.kind == "linear" else 1.0 / (1.0 + np.exp(-z))
        out = np.full(t.shape[:-1], float(q["base"]))
        for a, c, s in zip(q["amplitudes"], q["centers"], q["widths"]):
            diff = t - c
            out = out + a * np.exp(-np.sum(diff * diff, axis=-1) / (2.0 * s * s))
        return out

    def __call__(self, pts):
        out = np.clip(self.raw(pts), 0.0, 1.0)
        return float(out) if np.ndim(out) == 0 else out

    @property
    def closed_form(self) -> bool:
        return self.kind != "gaussian_mixture"

    def lipschitz_bound(self) -> float:
        q = self.params
        if self.kind == "gaussian_mixture":
            return float(sum(abs(a) / (s * np.sqrt(np.e)) for a, s in zip(q["amplitudes"], q["widths"])))
        if self.kind == "linear":
            return float(np.linalg.norm(q["w"]))
        if self.kind == "sigmoid":
            return 0.25 * float(np.linalg.norm(q["w"]))
        return np.inf

    def describe(self) -> str:
        parts = []
        for key, value in self.params.items():
            if key in ("centers",):
                value = "|".join(_fmt_vec(c) for c in value)
            else:
                value = _fmt_vec(value)
            parts.append(f"{key}={value}")
        return " ".join(parts)


def quadratic_field(mu: float, u0: float, center) -> ScalarField:
    center = np.atleast_1d(np.asarray(center, dtype=np.float64))
    if mu <= 0:
        raise ValueError("mu must be positive")
    return ScalarField("quadratic", {"mu": float(mu), "u0": float(u0), "center": center}, center.size)


def linear_field(w, b: float = 0.0) -> ScalarField:
    w = np.atleast_1d(np.asarray(w, dtype=np.float64))
    return ScalarField("linear", {"w": w, "b": float(b)}, w.size)


def sigmoid_field(w, b: float = 0.0) -> ScalarField:
    w = np.atleast_1d(np.asarray(w, dtype=np.float64))
    return ScalarField("sigmoid", {"w": w, "b": float(b)}, w.size)


def gaussian_mixture_field(base, amplitudes, centers, widths) -> ScalarField:
    centers = [np.atleast_1d(np.asarray(c, dtype=np.float64)) for c in centers]
    dim = centers[0].size if centers else 1
    return ScalarField("gaussian_mixture", {
        "base": float(base),
        "amplitudes": np.asarray(amplitudes, dtype=np.float64),
        "centers": centers,
        "widths": np.asarray(widths, dtype=np.float64),
    }, dim)


def random_mixture_field(rng: np.random.Generator, dim: int | None = None) -> ScalarField:
    dim = int(rng.integers(1, 3)) if dim is None else dim
    k = int(rng.integers(1, 5))
    return gaussian_mixture_field(
        base=rng.uniform(0.2, 0.8),
        amplitudes=rng.uniform(-0.4, 0.4, size=k),
        centers=[rng.uniform(-1, 1, size=dim) for _ in range(k)],
        widths=rng.uniform(0.05, 0.5, size=k),
    )


@dataclass
class BallOptimum:
    point: np.ndarray
    value: float
    method: str


# -- extrema over balls -----------------------------------------------------

def _closed_form_point(fld: ScalarField, ball: NormBall, kind: str) -> np.ndarray:
    c = np.atleast_1d(ball.center).astype(np.float64)
    r = float(ball.radius)
    q = fld.params
    if fld.kind == "quadratic":
        if kind == "min":
            return project(q["center"], NormBall(ball.p, c, r))
        away = c - q["center"]
        if ball.p is Norm.LINF:
            return c + r * np.where(away >= 0, 1.0, -1.0)
        length = np.linalg.norm(away)
        unit = away / length if length > 0 else np.eye(fld.dim)[0]
        return c + r * unit
    w = q["w"] if kind == "max" else -q["w"]
    if ball.p is Norm.LINF:
        return c + r * np.sign(w)
    length = np.linalg.norm(w)
    return c + (r * w / length if length > 0 else 0.0)


def _grid_candidates(center, r, p: Norm, h, dim):
    k = int(np.floor(r / h + 1e-9))
    axis = np.arange(-k, k + 1) * h
    if dim == 1:
        offs = axis[:, None]
    else:
        gx, gy = np.meshgrid(axis, axis, indexing="ij")
        offs = np.column_stack([gx.ravel(), gy.ravel()])
    if p is Norm.L2:
        offs = offs[np.sum(offs * offs, axis=1) <= r * r * (1 + 1e-12)]
    # boundary samples at a quarter of the pitch
    if dim == 1:
        bnd = np.array([[-r], [r]])
    elif p is Norm.L2:
        m = max(16, int(np.ceil(2 * np.pi * r / (h / 4))))
        ang = 2 * np.pi * np.arange(m) / m
        bnd = r * np.column_stack([np.cos(ang), np.sin(ang)])
    else:
        m = max(4, int(np.ceil(2 * r / (h / 4))))
        s = np.linspace(-r, r, m + 1)
        one = np.full_like(s, r)
        bnd = np.vstack([np.column_stack([s, one]), np.column_stack([s, -one]),
                         np.column_stack([one, s]), np.column_stack([-one, s])])
    return np.vstack([np.zeros((1, dim)), offs, bnd]) + center


def ball_extremum(fld: ScalarField, ball: NormBall, kind: str, *, pitch: float | None = None,
                  extra_points=None, force_grid: bool = False) -> BallOptimum:
    """argmin/argmax of ``fld`` over ``ball`` (closed form or grid + refinement)."""
    if kind not in ("min", "max"):
        raise ValueError("kind must be 'min' or 'max'")
    c = np.atleast_1d(np.asarray(ball.center, dtype=np.float64))
    r = float(ball.radius)
    if r == 0.0:
        return BallOptimum(c.copy(), fld(c), "closed-form" if fld.closed_form else "grid")
    if fld.closed_form and not force_grid:
        pt = _closed_form_point(fld, ball, kind)
        return BallOptimum(pt, fld(pt), "closed-form")

    h = r / GRID_DIVISIONS if pitch is None else float(pitch)
    cand = _grid_candidates(c, r, ball.p, h, fld.dim)
    if extra_points is not None:
        extra = np.atleast_2d(np.asarray(extra_points, dtype=np.float64))
        inside = NormBall(ball.p, c, r).contains(extra, tol=1e-12)
        cand = np.vstack([cand, extra[np.atleast_1d(inside)]])
    sgn = 1.0 if kind == "min" else -1.0
    vals = sgn * fld(cand)
    best = cand[int(np.argmin(vals))]

    # refinement: pitch/10 sub-grid around the winner, projected into the ball
    fine = np.arange(-10, 11) * (h / 10)
    if fld.dim == 1:
        offs = fine[:, None]
    else:
        gx, gy = np.meshgrid(fine, fine, indexing="ij")
        offs = np.column_stack([gx.ravel(), gy.ravel()])
    local = project(best + offs, NormBall(ball.p, c, r))
    local = np.vstack([best[None, :], local])
    lv = sgn * fld(local)
    pt = local[int(np.argmin(lv))]
    return BallOptimum(pt, fld(pt), "grid")


# -- binary DRQ -------------------------------------------------------------

@dataclass
class BinaryDrq:
    u_drq: float
    label: int
    explore_min: BallOptimum
    explore_max: BallOptimum
    quant_0: BallOptimum
    quant_1: BallOptimum


def round_label(t: float) -> int:
    return 1 if t >= 0.5 else 0


def binary_drq(fld: ScalarField, x, epsilon: float, alpha: float, p=Norm.L2, *,
               pitch: float | None = None) -> BinaryDrq:
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    p = Norm.parse(p)
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    h = epsilon / GRID_DIVISIONS if pitch is None else pitch
    vicinity = NormBall(p, x, epsilon)
    x0 = ball_extremum(fld, vicinity, "min", pitch=h)
    x1 = ball_extremum(fld, vicinity, "max", pitch=h)
    q0 = ball_extremum(fld, NormBall(p, x0.point, alpha * epsilon), "max", pitch=h, extra_points=x)
    q1 = ball_extremum(fld, NormBall(p, x1.point, alpha * epsilon), "min", pitch=h, extra_points=x)
    u_drq = q0.value if q0.value <= 1.0 - q1.value else q1.value
    return BinaryDrq(u_drq, round_label(u_drq), x0, x1, q0, q1)


def is_wide_local_minimum(fld: ScalarField, x, epsilon: float, p=Norm.L2, *, strict: bool = False,
                          pitch: float | None = None) -> bool:
    """Grid check of u(x) <= u(t) (or < when strict) for t in B(x; eps) minus x."""
    p = Norm.parse(p)
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    h = epsilon / GRID_DIVISIONS if pitch is None else pitch
    cand = _grid_candidates(x, epsilon, p, h, fld.dim)[1:]
    cand = cand[np.any(cand != x, axis=1)]
    ux, vals = fld(x), fld(cand)
    if strict:
        return bool(np.all(vals > ux))
    return bool(np.all(vals >= ux - 1e-12))


def sharpness(fld: ScalarField, x, epsilon: float, alpha: float, p=Norm.L2, *,
              pitch: float | None = None) -> float:
    """g_eps(alpha) = max over B(x; alpha eps) minus min over B(x; eps)."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    p = Norm.parse(p)
    if not is_wide_local_minimum(fld, x, epsilon, p, pitch=pitch):
        raise PreconditionError("x is not an epsilon-wide local minimum")
    h = epsilon / GRID_DIVISIONS if pitch is None else pitch
    hi = ball_extremum(fld, NormBall(p, x, alpha * epsilon), "max", pitch=h)
    lo = ball_extremum(fld, NormBall(p, x, epsilon), "min", pitch=h, extra_points=x)
    return hi.value - lo.value


# -- verification reports ---------------------------------------------------

@dataclass
class Check:
    quantity: str
    relation: str  # "le": measured <= bound, "ge": measured >= bound
    bound: float
    measured: float
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self):
        if self.relation == "le":
            self.passed = bool(self.measured <= self.bound + self.tol)
        else:
            self.passed = bool(self.measured >= self.bound - self.tol)

    def negated(self) -> "Check":
        flipped = "ge" if self.relation == "le" else "le"
        # strict flip so that exact equalities fail too
        out = Check(self.quantity, flipped, self.bound, self.measured, -self.tol - 1e-15)
        return out


@dataclass
class Report:
    field: ScalarField
    x: np.ndarray
    epsilon: float
    alpha: str
    checks: list[Check]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def rows(self) -> list[list[str]]:
        return [[self.field.kind, self.field.describe(), _fmt_vec(self.x), repr(float(self.epsilon)),
                 self.alpha, c.quantity, repr(float(c.bound)), repr(float(c.measured)),
                 "1" if c.passed else "0"] for c in self.checks]


def _tol(fld: ScalarField) -> float:
    return CLOSED_FORM_TOL if fld.closed_form else GRID_TOL


def verify_monotonicity(fld: ScalarField, x, epsilon: float, alpha_low: float, alpha_high: float,
                        p=Norm.L2) -> Report:
    """alpha-monotonicity of both quantified confidences and the alpha in {0, 1} extremes."""
    if not 0.0 <= alpha_low <= alpha_high <= 1.0:
        raise ValueError("need 0 <= alpha_low <= alpha_high <= 1")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    tol = _tol(fld)
    lo = binary_drq(fld, x, epsilon, alpha_low, p)
    hi = binary_drq(fld, x, epsilon, alpha_high, p)
    a0 = binary_drq(fld, x, epsilon, 0.0, p)
    a1 = binary_drq(fld, x, epsilon, 1.0, p)
    ux = fld(x)
    checks = [
        Check("u(x0_hat[lo]) <= u(x0_hat[hi])", "le", hi.quant_0.value, lo.quant_0.value, tol),
        Check("u(x1_hat[lo]) >= u(x1_hat[hi])", "ge", hi.quant_1.value, lo.quant_1.value, tol),
        Check("u(x0_hat[0]) <= u(x)", "le", ux, a0.quant_0.value, tol),
        Check("u(x) <= u(x0_hat[1])", "ge", ux, a1.quant_0.value, tol),
        Check("u(x1_hat[0]) >= u(x)", "ge", ux, a0.quant_1.value, tol),
        Check("u(x) >= u(x1_hat[1])", "le", ux, a1.quant_1.value, tol),
    ]
    return Report(fld, x, epsilon, f"{alpha_low!r}:{alpha_high!r}", checks)


def verify_strong_convexity_bound(fld: ScalarField, x, epsilon: float, alpha: float) -> Report:
    """Lower bounds on u_DRQ at the minimum of a mu-strongly convex quadratic bowl.

    Every value entering u_DRQ is taken on B(x; eps) or below u(x_tilde_1),
    so the bowl only has to stay inside [0, 1] on B(x; eps).
    """
    if fld.kind != "quadratic":
        raise PreconditionError("strong-convexity checks need the quadratic family")
    q = fld.params
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if not np.allclose(x, q["center"], rtol=0, atol=1e-12):
        raise PreconditionError("x must be the bowl minimum")
    if q["u0"] < 0 or q["u0"] + q["mu"] * epsilon ** 2 > 1:
        raise PreconditionError("quadratic leaves [0, 1] on B(x; eps)")
    mu, ux = q["mu"], fld(x)
    res = binary_drq(fld, x, epsilon, alpha, Norm.L2)
    g = sharpness(fld, x, epsilon, alpha, Norm.L2)
    far = ux + mu * (1 - alpha) ** 2 * epsilon ** 2
    tol = _tol(fld)
    checks = [
        Check("u_drq >= min(u(x)+g, u(x)+mu(1-a)^2 eps^2)", "ge", min(ux + g, far), res.u_drq, tol),
        Check("u_drq >= min(u(x)+mu a^2 eps^2, u(x)+mu(1-a)^2 eps^2)", "ge",
              min(ux + mu * alpha ** 2 * epsilon ** 2, far), res.u_drq, tol),
    ]
    if alpha == 0.5:
        checks.append(Check("u_drq >= u(x) + mu eps^2 / 4", "ge", ux + mu * epsilon ** 2 / 4, res.u_drq, tol))
    return Report(fld, x, epsilon, repr(float(alpha)), checks)


# -- full sweep -------------------------------------------------------------

QUADRATIC_MUS = (0.25, 0.5, 1.0, 2.0)
QUADRATIC_EPS = (0.1, 0.2, 0.4)
QUADRATIC_ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0)


def theory_sweep(n_random: int = 200, seed: int = 0, u0: float = 0.3, negate_first: bool = False) -> list[Report]:
    """Random mixture fields plus the full quadratic grid.

    ``negate_first`` flips the first check (harness self-test).
    """
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(n_random):
        fld = random_mixture_field(rng)
        x = rng.uniform(-1, 1, size=fld.dim)
        eps = rng.uniform(0.05, 0.5)
        lo, hi = np.sort(rng.uniform(0, 1, size=2))
        reports.append(verify_monotonicity(fld, x, eps, float(lo), float(hi)))
    for mu in QUADRATIC_MUS:
        for eps in QUADRATIC_EPS:
            fld = quadratic_field(mu, u0, np.zeros(2))
            for alpha in QUADRATIC_ALPHAS:
                reports.append(verify_strong_convexity_bound(fld, np.zeros(2), eps, alpha))
            reports.append(verify_monotonicity(fld, np.zeros(2), eps, 0.25, 0.75))
    if negate_first and reports:
        reports[0].checks[0] = reports[0].checks[0].negated()
    return reports


def reports_to_csv(reports: list[Report]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for rep in reports:
        writer.writerows(rep.rows())
    return buf.getvalue()
