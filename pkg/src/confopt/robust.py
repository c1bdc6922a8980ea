"""Robust min-max decisions over calibrated uncertainty regions.

The decision problem is min over a convex feasible set of the worst-case
objective over an uncertainty region.  For union-of-ball regions the inner
maximization decomposes into per-ball subproblems with closed forms for
linear objectives, so the outer minimization runs plain projected
subgradient descent with the Danskin subgradient at the worst-case
outcome.  Box and ellipsoid regions get matching closed forms so the
baselines share the same solver.

Step size and step count follow the standard subgradient analysis: with
gradient norms bounded by G and a feasible set of diameter D, running
T = ceil(G^2 D^2 / eps^2) steps at eta = D / (G sqrt(T)) makes the value
of the averaged iterate eps-suboptimal.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .conformal import (
    BallUnionScore,
    BoxScore,
    CalibratedRegion,
    ConditionalBoxScore,
    ConditionalEllipsoidScore,
    EllipsoidScore,
)
from .exceptions import InfeasibleError, ProjectionError, UnboundedRegionError


# ---------------------------------------------------------------------------
# objectives


class LinearObjective:
    """f(w, c) = sign * c . w; sign -1 casts profit maximization as minimization."""

    kind = "linear"

    def __init__(self, sign: int):
        if sign not in (-1, 1):
            raise ValueError("sign must be -1 or +1")
        self.sign = sign

    def value(self, w: np.ndarray, c: np.ndarray) -> float:
        return self.sign * float(np.dot(c, w))

    def grad_w(self, w: np.ndarray, c: np.ndarray) -> np.ndarray:
        return self.sign * np.asarray(c, dtype=float)

    def grad_c(self, w: np.ndarray, c: np.ndarray) -> np.ndarray:
        return self.sign * np.asarray(w, dtype=float)


LINEAR_COST = LinearObjective(+1)
LINEAR_PROFIT = LinearObjective(-1)


class GeneralObjective:
    """Convex-concave objective given by callbacks.

    Parameters
    ----------
    value, grad_w, grad_c : callables
        f(w, c), its gradient in w, and its gradient in c.
    lipschitz_c : float
        Bound on |f(w, c) - f(w, c')| / d(c, c') over the feasible set,
        used in the pessimism-gap bound.
    grad_bound : float
        Bound on the norm of grad_w over region outcomes, used for the
        step-size rule.
    """

    kind = "general"

    def __init__(self, value, grad_w, grad_c, lipschitz_c: float, grad_bound: float):
        self._value = value
        self._grad_w = grad_w
        self._grad_c = grad_c
        self.lipschitz_c = float(lipschitz_c)
        self.grad_bound = float(grad_bound)

    def value(self, w, c):
        return float(self._value(w, c))

    def grad_w(self, w, c):
        return np.asarray(self._grad_w(w, c), dtype=float)

    def grad_c(self, w, c):
        return np.asarray(self._grad_c(w, c), dtype=float)


# ---------------------------------------------------------------------------
# inner maximization over region pieces


def _ascend_ball(obj, w, center, radius, iters=200):
    """Projected gradient ascent of a concave objective over a ball."""
    c = center.astype(float).copy()
    best_c, best_v = c.copy(), obj.value(w, c)
    for t in range(1, iters + 1):
        g = obj.grad_c(w, c)
        gn = np.linalg.norm(g)
        if gn == 0.0:
            break
        c = c + (radius / (gn * math.sqrt(t))) * g
        offset = c - center
        dist = np.linalg.norm(offset)
        if dist > radius:
            c = center + offset * (radius / dist)
        v = obj.value(w, c)
        if v > best_v:
            best_c, best_v = c.copy(), v
    return best_c, best_v


def inner_max_ball(obj, w: np.ndarray, center: np.ndarray, radius: float) -> tuple[np.ndarray, float]:
    """Maximize f(w, .) over a ball.

    For linear objectives the maximizer is the center pushed to the
    boundary along the (signed) direction of w; with w = 0 every point
    ties and the center is returned.
    """
    w = np.asarray(w, dtype=float)
    center = np.asarray(center, dtype=float)
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if obj.kind == "linear":
        wn = np.linalg.norm(w)
        if wn == 0.0 or radius == 0.0:
            return center.copy(), obj.value(w, center)
        c_star = center + radius * obj.sign * w / wn
        return c_star, obj.sign * float(np.dot(center, w)) + radius * wn
    return _ascend_ball(obj, w, center, radius)


def inner_max_union(obj, w: np.ndarray, centers: np.ndarray, radius: float) -> tuple[np.ndarray, float, int]:
    """Maximize f(w, .) over a union of equal-radius balls.

    The maximum over a union is the maximum of the per-ball maxima; ties
    go to the lowest ball index.  Returns (argmax, value, ball index).
    """
    centers = np.asarray(centers, dtype=float)
    if centers.ndim != 2 or centers.shape[0] == 0:
        raise ValueError("centers must be a nonempty (k, dim) array")
    if not math.isfinite(radius):
        raise UnboundedRegionError(
            "the region radius is infinite; increase alpha or enlarge the calibration set"
        )
    w = np.asarray(w, dtype=float)
    if obj.kind == "linear":
        wn = np.linalg.norm(w)
        values = obj.sign * (centers @ w) + radius * wn
        k_star = int(np.argmax(values))
        if wn == 0.0 or radius == 0.0:
            c_star = centers[k_star].copy()
        else:
            c_star = centers[k_star] + radius * obj.sign * w / wn
        return c_star, float(values[k_star]), k_star
    best = None
    for k in range(centers.shape[0]):
        c_k, v_k = inner_max_ball(obj, w, centers[k], radius)
        if best is None or v_k > best[1]:
            best = (c_k, v_k, k)
    return best


def inner_max_box(obj, w: np.ndarray, center: np.ndarray, scales: np.ndarray, radius: float) -> tuple[np.ndarray, float]:
    """Maximize a linear objective over an axis-aligned box.

    The box is {c : |c_j - center_j| <= radius * scales_j}; the maximizer
    sits at the corner aligned with the signed direction of w, with tied
    coordinates (w_j = 0) left at the center.
    """
    if obj.kind != "linear":
        raise ValueError("box inner maximization is closed-form for linear objectives only")
    w = np.asarray(w, dtype=float)
    center = np.asarray(center, dtype=float)
    scales = np.asarray(scales, dtype=float)
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    c_star = center + radius * scales * obj.sign * np.sign(w)
    value = obj.sign * float(np.dot(center, w)) + radius * float(np.dot(scales, np.abs(w)))
    return c_star, value


def inner_max_ellipsoid(obj, w: np.ndarray, center: np.ndarray, shape: np.ndarray, radius: float) -> tuple[np.ndarray, float]:
    """Maximize a linear objective over {c : (c-m)' S^-1 (c-m) <= r^2}."""
    if obj.kind != "linear":
        raise ValueError("ellipsoid inner maximization is closed-form for linear objectives only")
    w = np.asarray(w, dtype=float)
    center = np.asarray(center, dtype=float)
    shape = np.asarray(shape, dtype=float)
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    sw = shape @ w
    spread = math.sqrt(max(float(np.dot(w, sw)), 0.0))
    if spread == 0.0 or radius == 0.0:
        return center.copy(), obj.value(w, center)
    c_star = center + (radius * obj.sign / spread) * sw
    return c_star, obj.sign * float(np.dot(center, w)) + radius * spread


# ---------------------------------------------------------------------------
# feasible sets


class Box01:
    """The unit box [0, 1]^dim."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = int(dim)

    def project(self, w: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(w, dtype=float), 0.0, 1.0)

    def sample_start(self, rng: np.random.Generator) -> np.ndarray:
        return rng.random(self.dim)

    def diameter(self) -> float:
        return math.sqrt(self.dim)

    def norm_bound(self) -> float:
        """Largest Euclidean norm of a feasible point."""
        return math.sqrt(self.dim)


class BoxBudget:
    """The unit box intersected with one budget constraint p . w <= budget."""

    def __init__(self, p: np.ndarray, budget: float):
        self.p = np.asarray(p, dtype=float)
        if self.p.ndim != 1 or np.any(self.p <= 0):
            raise ValueError("budget weights must be a 1-D positive vector")
        if budget < 0:
            raise InfeasibleError(f"budget must be >= 0, got {budget}")
        self.budget = float(budget)
        self.dim = self.p.shape[0]

    def project(self, w: np.ndarray) -> np.ndarray:
        v = np.clip(np.asarray(w, dtype=float), 0.0, 1.0)
        if float(self.p @ v) <= self.budget:
            return v
        # KKT: the projection is clip(w - lam * p, 0, 1) with the smallest
        # lam >= 0 that meets the budget; the budget usage is nonincreasing
        # in lam, so bisect it down to float resolution.
        w = np.asarray(w, dtype=float)
        lo = 0.0
        hi = float(np.max(w / self.p)) + 1.0
        for _ in range(128):
            mid = 0.5 * (lo + hi)
            if float(self.p @ np.clip(w - mid * self.p, 0.0, 1.0)) > self.budget:
                lo = mid
            else:
                hi = mid
        return np.clip(w - hi * self.p, 0.0, 1.0)

    def sample_start(self, rng: np.random.Generator) -> np.ndarray:
        for _ in range(100):
            w = rng.random(self.dim)
            if float(self.p @ w) <= self.budget:
                return w
        return self.project(rng.random(self.dim))

    def diameter(self) -> float:
        return math.sqrt(self.dim)

    def norm_bound(self) -> float:
        return math.sqrt(self.dim)


class AffineBox:
    """The unit box intersected with affine equalities A w = b.

    Projection runs Dykstra's alternating scheme between the affine
    subspace (closed-form least-squares step) and the box; it stops when a
    full cycle moves less than `move_tol` and the affine residual is below
    `residual_tol`, and raises with the residual if the iteration cap is
    hit.  Feasibility of the intersection is checked at construction.
    """

    def __init__(self, A: np.ndarray, b: np.ndarray, move_tol: float = 1e-8, residual_tol: float = 1e-11, max_iter: int = 10_000):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        if self.A.ndim != 2 or self.b.shape != (self.A.shape[0],):
            raise ValueError("A must be (m, n) and b must be (m,)")
        self.dim = self.A.shape[1]
        self.move_tol = float(move_tol)
        self.residual_tol = float(residual_tol)
        self.max_iter = int(max_iter)
        self._gram_pinv = np.linalg.pinv(self.A @ self.A.T)
        check = linprog(np.zeros(self.dim), A_eq=self.A, b_eq=self.b, bounds=(0.0, 1.0), method="highs")
        if not check.success:
            raise InfeasibleError("the affine constraints have no solution inside the unit box")

    def _affine_project(self, w: np.ndarray) -> np.ndarray:
        return w - self.A.T @ (self._gram_pinv @ (self.A @ w - self.b))

    def project(self, w: np.ndarray) -> np.ndarray:
        x = np.asarray(w, dtype=float).copy()
        inc_affine = np.zeros_like(x)
        inc_box = np.zeros_like(x)
        residual = math.inf
        for _ in range(self.max_iter):
            y = self._affine_project(x + inc_affine)
            inc_affine = x + inc_affine - y
            x_new = np.clip(y + inc_box, 0.0, 1.0)
            inc_box = y + inc_box - x_new
            move = float(np.max(np.abs(x_new - x)))
            x = x_new
            residual = float(np.max(np.abs(self.A @ x - self.b)))
            if move < self.move_tol and residual < self.residual_tol:
                return x
        raise ProjectionError(
            f"alternating projection did not converge within {self.max_iter} cycles "
            f"(affine residual {residual:.3e})"
        )

    def sample_start(self, rng: np.random.Generator) -> np.ndarray:
        return self.project(rng.random(self.dim))

    def diameter(self) -> float:
        return math.sqrt(self.dim)

    def norm_bound(self) -> float:
        return math.sqrt(self.dim)


# ---------------------------------------------------------------------------
# region geometry shared by the solver, the gap report, and the baselines


class RegionGeometry:
    """Worst-case interface for one region at one query point."""

    def inner_max(self, obj, w):
        raise NotImplementedError

    def diameter(self) -> float:
        raise NotImplementedError

    def grad_bound(self, obj) -> float:
        raise NotImplementedError


class UnionGeometry(RegionGeometry):
    def __init__(self, centers: np.ndarray, radius: float):
        self.centers = np.asarray(centers, dtype=float)
        self.radius = float(radius)

    def inner_max(self, obj, w):
        c_star, value, _ = inner_max_union(obj, w, self.centers, self.radius)
        return c_star, value

    def diameter(self) -> float:
        diffs = self.centers[:, None, :] - self.centers[None, :, :]
        spread = float(np.sqrt((diffs**2).sum(axis=2)).max())
        return spread + 2.0 * self.radius

    def grad_bound(self, obj) -> float:
        if obj.kind == "linear":
            return float(np.max(np.linalg.norm(self.centers, axis=1))) + self.radius
        return obj.grad_bound


class BoxGeometry(RegionGeometry):
    def __init__(self, center: np.ndarray, scales: np.ndarray, radius: float):
        self.center = np.asarray(center, dtype=float)
        self.scales = np.asarray(scales, dtype=float)
        self.radius = float(radius)

    def inner_max(self, obj, w):
        return inner_max_box(obj, w, self.center, self.scales, self.radius)

    def diameter(self) -> float:
        return 2.0 * self.radius * float(np.linalg.norm(self.scales))

    def grad_bound(self, obj) -> float:
        if obj.kind == "linear":
            return float(np.linalg.norm(np.abs(self.center) + self.radius * self.scales))
        return obj.grad_bound


class EllipsoidGeometry(RegionGeometry):
    def __init__(self, center: np.ndarray, shape: np.ndarray, radius: float):
        self.center = np.asarray(center, dtype=float)
        self.shape = np.asarray(shape, dtype=float)
        self.radius = float(radius)
        self._top_eig = float(np.linalg.eigvalsh(self.shape)[-1])

    def inner_max(self, obj, w):
        return inner_max_ellipsoid(obj, w, self.center, self.shape, self.radius)

    def diameter(self) -> float:
        return 2.0 * self.radius * math.sqrt(max(self._top_eig, 0.0))

    def grad_bound(self, obj) -> float:
        if obj.kind == "linear":
            return float(np.linalg.norm(self.center)) + self.radius * math.sqrt(max(self._top_eig, 0.0))
        return obj.grad_bound


def region_geometry(region: CalibratedRegion, x: np.ndarray) -> RegionGeometry:
    """Geometry of a calibrated region at a query point.

    Raises
    ------
    UnboundedRegionError
        If the conformal threshold is infinite; no worst case exists, so
        increase alpha or enlarge the calibration set.
    """
    if not math.isfinite(region.q_hat):
        raise UnboundedRegionError(
            "the calibrated region is unbounded; increase alpha or enlarge the calibration set"
        )
    score = region.score
    if isinstance(score, BallUnionScore):
        return UnionGeometry(score.centers(x), region.q_hat)
    if isinstance(score, (BoxScore, ConditionalBoxScore)):
        return BoxGeometry(score.center_for(x), score.scales, region.q_hat)
    if isinstance(score, EllipsoidScore):
        return EllipsoidGeometry(score.center, score.shape, region.q_hat)
    if isinstance(score, ConditionalEllipsoidScore):
        mean, cov = score.moments_for(x)
        return EllipsoidGeometry(mean, cov, region.q_hat)
    raise TypeError(f"no geometry for score type {type(score).__name__}")


# ---------------------------------------------------------------------------
# outer minimization


def pgd_steps_for_accuracy(grad_bound: float, diameter: float, epsilon: float) -> int:
    """Step count that makes the averaged iterate epsilon-suboptimal."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    return max(1, math.ceil((grad_bound * diameter / epsilon) ** 2))


def pgd_step_size(grad_bound: float, diameter: float, steps: int) -> float:
    """Constant step size matching `pgd_steps_for_accuracy`."""
    if grad_bound <= 0:
        return 1.0
    return diameter / (grad_bound * math.sqrt(steps))


@dataclass
class OptResult:
    """Averaged-iterate solution of one robust minimization."""

    w: np.ndarray
    robust_value: float
    worst_case_c: np.ndarray
    iterations: int
    seed: int
    w_last: np.ndarray
    eta: float

    def to_dict(self) -> dict:
        return {
            "w": self.w.tolist(),
            "robust_value": self.robust_value,
            "worst_case_c": self.worst_case_c.tolist(),
            "iterations": self.iterations,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def robust_minimize(
    geometry: RegionGeometry,
    obj,
    feasible,
    steps: int | None = None,
    eta: float | str = "auto",
    epsilon: float | None = None,
    seed: int = 0,
    w0: np.ndarray | None = None,
) -> OptResult:
    """Projected subgradient descent on the worst-case objective.

    Each step evaluates the inner maximization, takes the Danskin
    subgradient at the maximizer, steps, and projects back onto the
    feasible set.  The reported solution is the average of all iterates
    including the start, whose worst case is re-evaluated at the end.

    Parameters
    ----------
    steps : int or None
        Number of subgradient steps.  If None, `epsilon` must be given
        and the count comes from the G^2 D^2 / eps^2 rule.
    eta : float or "auto"
        Step size; "auto" uses D / (G sqrt(T)).
    epsilon : float or None
        Target suboptimality for the averaged iterate.
    """
    rng = np.random.default_rng(seed)
    grad_bound = geometry.grad_bound(obj)
    diam = feasible.diameter()
    if steps is None:
        if epsilon is None:
            raise ValueError("either steps or epsilon must be given")
        steps = pgd_steps_for_accuracy(grad_bound, diam, epsilon)
    steps = int(steps)
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if eta == "auto":
        eta = pgd_step_size(grad_bound, diam, steps)
    eta = float(eta)
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")

    w = feasible.project(np.asarray(w0, dtype=float)) if w0 is not None else feasible.sample_start(rng)
    w_sum = w.copy()
    for _ in range(steps):
        c_star, _ = geometry.inner_max(obj, w)
        w = feasible.project(w - eta * obj.grad_w(w, c_star))
        w_sum += w
    w_avg = w_sum / (steps + 1)
    c_star, value = geometry.inner_max(obj, w_avg)
    return OptResult(
        w=w_avg,
        robust_value=float(value),
        worst_case_c=np.asarray(c_star, dtype=float),
        iterations=steps,
        seed=int(seed),
        w_last=w,
        eta=eta,
    )


def minimize_over_region(
    region: CalibratedRegion,
    x: np.ndarray,
    obj,
    feasible,
    steps: int | None = 2000,
    eta: float | str = "auto",
    epsilon: float | None = None,
    seed: int = 0,
    w0: np.ndarray | None = None,
) -> OptResult:
    """Robust minimization against a calibrated region at query point x."""
    return robust_minimize(region_geometry(region, x), obj, feasible, steps=steps, eta=eta, epsilon=epsilon, seed=seed, w0=w0)


def nominal_optimum(obj, feasible, c: np.ndarray) -> tuple[np.ndarray, float]:
    """Exact minimizer of f(., c) over the feasible set for linear objectives.

    Unit-box problems have a sign-inspection solution; budget and flow
    problems are solved as linear programs.  General objectives fall back
    to long-run projected gradient descent.
    """
    c = np.asarray(c, dtype=float)
    if obj.kind == "linear":
        coeff = obj.sign * c
        if isinstance(feasible, Box01):
            w = (coeff < 0).astype(float)
            return w, float(coeff @ w)
        if isinstance(feasible, BoxBudget):
            res = linprog(coeff, A_ub=feasible.p[None, :], b_ub=[feasible.budget], bounds=(0.0, 1.0), method="highs")
        elif isinstance(feasible, AffineBox):
            res = linprog(coeff, A_eq=feasible.A, b_eq=feasible.b, bounds=(0.0, 1.0), method="highs")
        else:
            raise TypeError(f"no nominal solver for feasible set {type(feasible).__name__}")
        if not res.success:
            raise InfeasibleError(f"nominal linear program failed: {res.message}")
        return res.x, float(res.fun)

    # general convex objective at fixed c: long-run PGD with decaying steps
    rng = np.random.default_rng(0)
    w = feasible.sample_start(rng)
    g0 = max(float(np.linalg.norm(obj.grad_w(w, c))), 1e-12)
    for t in range(1, 5001):
        w = feasible.project(w - (feasible.diameter() / (g0 * math.sqrt(t))) * obj.grad_w(w, c))
    return w, obj.value(w, c)


@dataclass
class GapReport:
    """Pessimism diagnostics for one decision instance."""

    delta: float
    bound: float
    covered: bool
    robust_value: float
    nominal_value: float
    diameter: float


def pessimism_gap(
    region: CalibratedRegion,
    x: np.ndarray,
    c_true: np.ndarray,
    obj,
    feasible,
    result: OptResult | None = None,
    **solve_kwargs,
) -> GapReport:
    """Gap between the robust optimum and the clairvoyant nominal optimum.

    On instances where the region covers the realized outcome, the gap is
    nonnegative and at most the objective's outcome-Lipschitz constant
    times the region diameter; both the gap and that bound are reported.
    """
    geometry = region_geometry(region, x)
    if result is None:
        result = robust_minimize(geometry, obj, feasible, **solve_kwargs)
    _, nominal_value = nominal_optimum(obj, feasible, c_true)
    lipschitz = feasible.norm_bound() if obj.kind == "linear" else obj.lipschitz_c
    diam = geometry.diameter()
    return GapReport(
        delta=float(result.robust_value - nominal_value),
        bound=float(lipschitz * diam),
        covered=region.contains(x, c_true),
        robust_value=float(result.robust_value),
        nominal_value=float(nominal_value),
        diameter=float(diam),
    )
