"""Benchmark tasks with tractable or simulation-based conditional samplers.

Each task bundles two things: a joint generator that draws (input, outcome)
pairs for building calibration and test sets, and a conditional sampler
that draws outcomes given an input.  The Gaussian tasks have closed-form
conditionals; the two-moons task only has a forward simulator, so its
conditional draws come from ABC rejection; the precipitation task is a
synthetic stochastic field model used by the routing problem.

All randomness flows through explicit `numpy.random.Generator` instances,
so identical seeds reproduce identical draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import zoom
from scipy.special import log_ndtr, logsumexp
from scipy.stats import truncnorm

from .exceptions import AbcBudgetError


class ConditionalSampler:
    """Interface: joint pair generation plus conditional outcome draws."""

    dim_x: int
    dim_c: int

    def sample(self, x: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n outcomes from the conditional law of C given x, shape (n, dim_c)."""
        raise NotImplementedError

    def sample_joint(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw n (x, c) pairs from the task joint, shapes (n, dim_x) and (n, dim_c)."""
        raise NotImplementedError


class GaussianLinearSampler(ConditionalSampler):
    """Conjugate Gaussian task.

    The outcome has prior N(0, 0.1 I) and the input is the outcome plus
    N(0, 0.1 I) noise, so the conditional of the outcome given x is the
    conjugate posterior N(x / 2, 0.05 I).
    """

    PRIOR_VAR = 0.1
    NOISE_VAR = 0.1

    def __init__(self, dim: int = 10):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim_x = self.dim_c = int(dim)

    @property
    def posterior_var(self) -> float:
        return 1.0 / (1.0 / self.PRIOR_VAR + 1.0 / self.NOISE_VAR)

    def posterior_mean(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) * (self.posterior_var / self.NOISE_VAR)

    def sample(self, x, n, rng):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim_x,):
            raise ValueError(f"x must have shape ({self.dim_x},), got {x.shape}")
        return self.posterior_mean(x) + math.sqrt(self.posterior_var) * rng.standard_normal((n, self.dim_c))

    def simulate(self, c, rng):
        c = np.asarray(c, dtype=float)
        return c + math.sqrt(self.NOISE_VAR) * rng.standard_normal(self.dim_x)

    def sample_joint(self, n, rng):
        c = math.sqrt(self.PRIOR_VAR) * rng.standard_normal((n, self.dim_c))
        x = c + math.sqrt(self.NOISE_VAR) * rng.standard_normal((n, self.dim_x))
        return x, c


class GaussianLinearUniformSampler(ConditionalSampler):
    """Gaussian likelihood with a uniform prior box.

    The outcome is uniform on [-1, 1]^dim and the input adds N(0, 0.1 I)
    noise.  Coordinates decouple, so the conditional is an independent
    truncated normal per coordinate, centered at the input coordinate.
    """

    NOISE_VAR = 0.1
    LOW, HIGH = -1.0, 1.0

    def __init__(self, dim: int = 10):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim_x = self.dim_c = int(dim)

    def sample(self, x, n, rng):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim_x,):
            raise ValueError(f"x must have shape ({self.dim_x},), got {x.shape}")
        sigma = math.sqrt(self.NOISE_VAR)
        out = np.empty((n, self.dim_c))
        for j in range(self.dim_c):
            a = (self.LOW - x[j]) / sigma
            b = (self.HIGH - x[j]) / sigma
            out[:, j] = truncnorm.rvs(a, b, loc=x[j], scale=sigma, size=n, random_state=rng)
        return out

    def simulate(self, c, rng):
        c = np.asarray(c, dtype=float)
        return c + math.sqrt(self.NOISE_VAR) * rng.standard_normal(self.dim_x)

    def sample_joint(self, n, rng):
        c = rng.uniform(self.LOW, self.HIGH, size=(n, self.dim_c))
        x = c + math.sqrt(self.NOISE_VAR) * rng.standard_normal((n, self.dim_x))
        return x, c


class GaussianMixtureSampler(ConditionalSampler):
    """Two-scale Gaussian mixture on a planar box.

    The outcome is uniform on (-10, 10)^2 and the input is the outcome
    plus noise from an equal mixture of N(0, I) and N(0, 0.01 I).  By
    symmetry the conditional is the same mixture centered at x, with the
    component weights tilted by how much of each component's mass the
    prior box retains, truncated to the box.
    """

    BOX = 10.0
    VARS = (1.0, 0.01)

    dim_x = dim_c = 2

    def _log_masses(self, x: np.ndarray) -> np.ndarray:
        """Log prior-box mass of each component centered at x."""
        out = np.empty(2)
        for j, var in enumerate(self.VARS):
            sigma = math.sqrt(var)
            hi = (self.BOX - x) / sigma
            lo = (-self.BOX - x) / sigma
            # log(Phi(hi) - Phi(lo)) per coordinate, stable for far-out x
            per_coord = log_ndtr(hi) + np.log1p(-np.exp(np.minimum(log_ndtr(lo) - log_ndtr(hi), -1e-12)))
            out[j] = per_coord.sum()
        return out

    def responsibilities(self, x: np.ndarray) -> np.ndarray:
        """Posterior weight of (broad, tight) components at x."""
        x = np.asarray(x, dtype=float)
        logw = self._log_masses(x) + math.log(0.5)
        if not np.isfinite(logw).any():
            return np.array([1.0, 0.0])
        return np.exp(logw - logsumexp(logw))

    def sample(self, x, n, rng):
        x = np.asarray(x, dtype=float)
        if x.shape != (2,):
            raise ValueError(f"x must have shape (2,), got {x.shape}")
        weights = self.responsibilities(x)
        comps = rng.choice(2, size=n, p=weights)
        out = np.empty((n, 2))
        for i in range(n):
            sigma = math.sqrt(self.VARS[comps[i]])
            out[i] = self._truncated_draw(x, sigma, rng)
        return out

    # Box truncation is done by rejection; the exact per-coordinate
    # truncated normal is the fallback once the attempt ceiling is hit
    # (relevant only for inputs far outside the prior box).
    REJECTION_CAP = 10_000

    def _truncated_draw(self, x: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
        for _ in range(self.REJECTION_CAP):
            draw = x + sigma * rng.standard_normal(2)
            if np.all(np.abs(draw) < self.BOX):
                return draw
        a = (-self.BOX - x) / sigma
        b = (self.BOX - x) / sigma
        return truncnorm.rvs(a, b, loc=x, scale=sigma, random_state=rng)

    def simulate(self, c, rng):
        c = np.asarray(c, dtype=float)
        sigma = math.sqrt(self.VARS[rng.choice(2)])
        return c + sigma * rng.standard_normal(2)

    def sample_joint(self, n, rng):
        c = rng.uniform(-self.BOX, self.BOX, size=(n, 2))
        sigmas = np.sqrt(np.asarray(self.VARS))[rng.choice(2, size=n)]
        x = c + sigmas[:, None] * rng.standard_normal((n, 2))
        return x, c


class TwoMoonsSampler(ConditionalSampler):
    """Crescent-shaped bimodal task with an ABC-rejection conditional.

    The outcome is uniform on [-1, 1]^2 and the simulator places the input
    on a noisy arc shifted by a function of the outcome that is invariant
    to swapping and negating its coordinates, which makes the conditional
    law bimodal.  Conditional draws are produced by rejection: propose
    outcomes from the prior, simulate, and keep proposals whose simulated
    input lands within `tolerance` of the query.

    When `tolerance` is None, a per-query pilot of `PILOT_SIZE` prior
    simulations sets it to the 5% quantile of the pilot distances.
    """

    LOW, HIGH = -1.0, 1.0
    PILOT_SIZE = 10_000
    PILOT_QUANTILE = 0.05

    dim_x = dim_c = 2

    def __init__(self, tolerance: float | None = None, budget: int = 400_000, batch: int = 20_000):
        if tolerance is not None and tolerance <= 0:
            raise ValueError(f"tolerance must be positive, got {tolerance}")
        if budget < 1:
            raise ValueError(f"budget must be >= 1, got {budget}")
        self.tolerance = tolerance
        self.budget = int(budget)
        self.batch = int(batch)

    @staticmethod
    def forward_map(c: np.ndarray, angle: np.ndarray, radius: np.ndarray) -> np.ndarray:
        """Deterministic part of the simulator for rows of c."""
        c = np.atleast_2d(np.asarray(c, dtype=float))
        angle = np.asarray(angle, dtype=float)
        radius = np.asarray(radius, dtype=float)
        base = np.column_stack([radius * np.cos(angle) + 0.25, radius * np.sin(angle)])
        shift = np.column_stack([-np.abs(c[:, 0] + c[:, 1]), -c[:, 0] + c[:, 1]]) / math.sqrt(2.0)
        return base + shift

    def _forward(self, c: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Vectorized simulator for rows of c."""
        c = np.atleast_2d(np.asarray(c, dtype=float))
        n = c.shape[0]
        a = rng.uniform(-math.pi / 2.0, math.pi / 2.0, size=n)
        r = rng.normal(0.1, 0.01, size=n)
        return self.forward_map(c, a, r)

    def simulate(self, c, rng):
        return self._forward(np.asarray(c, dtype=float)[None, :], rng)[0]

    def pilot_tolerance(self, x: np.ndarray, rng: np.random.Generator) -> float:
        c = rng.uniform(self.LOW, self.HIGH, size=(self.PILOT_SIZE, 2))
        sims = self._forward(c, rng)
        dists = np.linalg.norm(sims - np.asarray(x, dtype=float), axis=1)
        return float(np.quantile(dists, self.PILOT_QUANTILE))

    def sample(self, x, n, rng):
        x = np.asarray(x, dtype=float)
        if x.shape != (2,):
            raise ValueError(f"x must have shape (2,), got {x.shape}")
        tol = self.tolerance if self.tolerance is not None else self.pilot_tolerance(x, rng)
        accepted: list[np.ndarray] = []
        n_kept = 0
        attempts = 0
        min_seen = math.inf
        while n_kept < n and attempts < self.budget:
            block = min(self.batch, self.budget - attempts)
            proposals = rng.uniform(self.LOW, self.HIGH, size=(block, 2))
            sims = self._forward(proposals, rng)
            dists = np.linalg.norm(sims - x, axis=1)
            min_seen = min(min_seen, float(dists.min()))
            keep = proposals[dists <= tol]
            accepted.append(keep)
            n_kept += len(keep)
            attempts += block
        if n_kept < n:
            raise AbcBudgetError(
                f"ABC rejection accepted {n_kept}/{n} draws after {attempts} simulations "
                f"(tolerance {tol:.6g}, smallest distance seen {min_seen:.6g}); "
                "raise the tolerance or the budget",
                n_accepted=n_kept,
                n_requested=n,
                n_simulations=attempts,
                tolerance=tol,
            )
        return np.concatenate(accepted, axis=0)[:n]

    def sample_joint(self, n, rng):
        c = rng.uniform(self.LOW, self.HIGH, size=(n, 2))
        x = self._forward(c, rng)
        return x, c


class BimodalGaussianSampler(ConditionalSampler):
    """Planar two-mode Gaussian task with an exact conditional.

    A latent fair coin picks one of two well-separated positive anchor
    points; the outcome is Gaussian around the anchor and the input adds
    more Gaussian noise.  Both conditional component posteriors are
    conjugate, so conditional draws are exact.  Useful as a controlled
    bimodal testbed where single-ball regions must span both modes.
    """

    MODES = (np.array([8.0, 3.0]), np.array([3.0, 8.0]))
    OUTCOME_VAR = 0.49
    NOISE_VAR = 1.0

    dim_x = dim_c = 2

    def _posterior_parts(self, x: np.ndarray):
        total = self.OUTCOME_VAR + self.NOISE_VAR
        post_var = self.OUTCOME_VAR * self.NOISE_VAR / total
        log_w = np.array(
            [-0.5 * np.sum((x - m) ** 2) / total for m in self.MODES]
        )
        weights = np.exp(log_w - logsumexp(log_w))
        means = [
            (self.OUTCOME_VAR * x + self.NOISE_VAR * m) / total for m in self.MODES
        ]
        return weights, means, post_var

    def sample(self, x, n, rng):
        x = np.asarray(x, dtype=float)
        if x.shape != (2,):
            raise ValueError(f"x must have shape (2,), got {x.shape}")
        weights, means, post_var = self._posterior_parts(x)
        comps = rng.choice(2, size=n, p=weights)
        out = np.stack([means[k] for k in comps])
        return out + math.sqrt(post_var) * rng.standard_normal((n, 2))

    def simulate(self, c, rng):
        c = np.asarray(c, dtype=float)
        return c + math.sqrt(self.NOISE_VAR) * rng.standard_normal(2)

    def sample_joint(self, n, rng):
        modes = np.stack(self.MODES)[rng.choice(2, size=n)]
        c = modes + math.sqrt(self.OUTCOME_VAR) * rng.standard_normal((n, 2))
        x = c + math.sqrt(self.NOISE_VAR) * rng.standard_normal((n, 2))
        return x, c


class PrecipitationFieldSampler(ConditionalSampler):
    """Synthetic precipitation nowcaster over a raster grid.

    Inputs are a short stack of past frames, flattened.  Up to three
    Gaussian bumps are fitted to the mean conditioning frame (location by
    peak extraction, intensity by peak height); a conditional draw
    re-renders the bumps with jittered locations, intensities, and widths,
    adds smooth low-amplitude noise, and clamps at zero.  With no signal
    in the conditioning frames the draws are just the clamped noise.
    """

    MAX_BUMPS = 3
    BUMP_SIGMA = 2.0
    LOC_JITTER = 1.0
    INTENSITY_JITTER = 0.25
    WIDTH_JITTER = 0.1
    NOISE_AMP = 0.02
    NOISE_CELLS = 4

    def __init__(self, height: int = 16, width: int = 16, n_frames: int = 2):
        if height < 2 or width < 2:
            raise ValueError("grid must be at least 2x2")
        self.height = int(height)
        self.width = int(width)
        self.n_frames = int(n_frames)
        self.dim_x = self.n_frames * self.height * self.width
        self.dim_c = self.height * self.width

    def _render(self, bumps: list[tuple[float, float, float, float]]) -> np.ndarray:
        field = np.zeros((self.height, self.width))
        yy, xx = np.mgrid[0 : self.height, 0 : self.width]
        for cy, cx, amp, sig in bumps:
            field += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sig**2))
        return field

    def fit_bumps(self, frame: np.ndarray) -> list[tuple[float, float, float, float]]:
        """Greedy peak extraction: location, height, fixed nominal width."""
        work = np.asarray(frame, dtype=float).copy()
        peak0 = float(work.max())
        bumps = []
        for _ in range(self.MAX_BUMPS):
            peak = float(work.max())
            if peak < max(0.05, 0.15 * peak0):
                break
            iy, ix = np.unravel_index(int(np.argmax(work)), work.shape)
            bumps.append((float(iy), float(ix), peak, self.BUMP_SIGMA))
            work -= self._render([bumps[-1]])
            np.maximum(work, 0.0, out=work)
        return bumps

    def _smooth_noise(self, rng: np.random.Generator) -> np.ndarray:
        coarse = rng.standard_normal((self.NOISE_CELLS, self.NOISE_CELLS))
        fine = zoom(coarse, (self.height / self.NOISE_CELLS, self.width / self.NOISE_CELLS), order=1)
        return self.NOISE_AMP * fine[: self.height, : self.width]

    def _draw_field(self, bumps, rng: np.random.Generator) -> np.ndarray:
        jittered = []
        for cy, cx, amp, sig in bumps:
            jittered.append(
                (
                    cy + self.LOC_JITTER * rng.standard_normal(),
                    cx + self.LOC_JITTER * rng.standard_normal(),
                    amp * math.exp(self.INTENSITY_JITTER * rng.standard_normal()),
                    sig * math.exp(self.WIDTH_JITTER * rng.standard_normal()),
                )
            )
        field = self._render(jittered) + self._smooth_noise(rng)
        return np.maximum(field, 0.0)

    def context_frames(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim_x,):
            raise ValueError(f"x must have shape ({self.dim_x},), got {x.shape}")
        return x.reshape(self.n_frames, self.height, self.width)

    def sample(self, x, n, rng):
        mean_frame = self.context_frames(x).mean(axis=0)
        bumps = self.fit_bumps(mean_frame)
        return np.stack([self._draw_field(bumps, rng).ravel() for _ in range(n)])

    def sample_context(self, rng: np.random.Generator) -> np.ndarray:
        """Draw a conditioning input: shared bumps rendered into each frame."""
        n_bumps = int(rng.integers(1, self.MAX_BUMPS + 1))
        bumps = [
            (
                float(rng.uniform(2, self.height - 3)),
                float(rng.uniform(2, self.width - 3)),
                float(rng.uniform(0.8, 2.0)),
                self.BUMP_SIGMA,
            )
            for _ in range(n_bumps)
        ]
        frames = [np.maximum(self._render(bumps) + self._smooth_noise(rng), 0.0) for _ in range(self.n_frames)]
        return np.stack(frames).ravel()

    def sample_joint(self, n, rng):
        xs = np.stack([self.sample_context(rng) for _ in range(n)])
        cs = np.stack([self.sample(x, 1, rng)[0] for x in xs])
        return xs, cs


@dataclass(frozen=True)
class TaskSpec:
    """Registry entry: how to build a task's sampler and pair it with a decision."""

    name: str
    factory: object
    decision: str  # "knapsack" or "routing"
    description: str


TASKS: dict[str, TaskSpec] = {
    "gaussian_linear": TaskSpec(
        "gaussian_linear", lambda: GaussianLinearSampler(dim=10), "knapsack", "conjugate Gaussian, 10-D"
    ),
    "gaussian_linear_uniform": TaskSpec(
        "gaussian_linear_uniform",
        lambda: GaussianLinearUniformSampler(dim=10),
        "knapsack",
        "Gaussian likelihood, uniform prior box, 10-D",
    ),
    "gaussian_mixture": TaskSpec(
        "gaussian_mixture", lambda: GaussianMixtureSampler(), "knapsack", "two-scale planar mixture"
    ),
    "two_moons": TaskSpec("two_moons", lambda: TwoMoonsSampler(), "knapsack", "bimodal crescents via ABC"),
    "bimodal_gauss": TaskSpec(
        "bimodal_gauss", lambda: BimodalGaussianSampler(), "knapsack", "two well-separated planar modes, exact"
    ),
    "routing_grid": TaskSpec(
        "routing_grid", lambda: PrecipitationFieldSampler(), "routing", "synthetic precipitation over a grid road network"
    ),
}


def make_sampler(task: str) -> ConditionalSampler:
    """Instantiate a registered task sampler; unknown names list the registry."""
    if task not in TASKS:
        raise KeyError(f"unknown task {task!r}; available tasks: {', '.join(sorted(TASKS))}")
    return TASKS[task].factory()
