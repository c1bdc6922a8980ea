"""Metric-space primitives: distances, balls, and Monte Carlo union volumes.

Everything downstream (calibration, robust optimization, representative
points) treats the outcome space as a metric space and uncertainty regions
as unions of metric balls.  This module holds the shared geometry: the
metric itself, exact single-ball volumes, uniform sampling inside a ball,
nearest-center ownership, and the Monte Carlo estimator for the volume of
a union of equal-radius balls with overlap deduplicated by Voronoi
ownership.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist


class Metric:
    """Distance function on the outcome space.

    Only the Euclidean (L2) metric is implemented, but the type exists so
    that scores and regions carry their metric explicitly and other
    metrics can be added without touching call sites.
    """

    def __init__(self, kind: str = "euclidean"):
        if kind != "euclidean":
            raise ValueError(f"unsupported metric kind: {kind!r}")
        self.kind = kind

    def __call__(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))

    def pairwise(self, points: np.ndarray, centers: np.ndarray) -> np.ndarray:
        """Distance matrix between rows of `points` and rows of `centers`."""
        return cdist(np.atleast_2d(points), np.atleast_2d(centers))

    def __repr__(self):
        return f"Metric({self.kind!r})"

    def __eq__(self, other):
        return isinstance(other, Metric) and other.kind == self.kind


EUCLIDEAN = Metric("euclidean")


@dataclass(frozen=True)
class Ball:
    """Closed metric ball with a center and a nonnegative radius."""

    center: np.ndarray
    radius: float
    metric: Metric = field(default_factory=lambda: EUCLIDEAN)

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float)
        if center.ndim != 1:
            raise ValueError("ball center must be a 1-D vector")
        object.__setattr__(self, "center", center)
        if not self.radius >= 0.0:
            raise ValueError(f"ball radius must be >= 0, got {self.radius}")

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def contains(self, point: np.ndarray) -> bool:
        return distance(point, self.center, self.metric) <= self.radius


def distance(a: np.ndarray, b: np.ndarray, metric: Metric = EUCLIDEAN) -> float:
    """Distance between two vectors of equal dimension.

    Parameters
    ----------
    a, b : ndarray of shape (dim,)
        Input vectors.
    metric : Metric
        Metric to evaluate.  Euclidean by default.

    Returns
    -------
    float
        Nonnegative distance, zero iff the inputs are identical.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 1 or b.ndim != 1:
        raise ValueError("distance expects 1-D vectors")
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return metric(a, b)


def ball_volume(dim: int, radius: float) -> float:
    """Lebesgue volume of a Euclidean ball.

    Uses the closed form pi^(d/2) r^d / Gamma(d/2 + 1).

    Parameters
    ----------
    dim : int
        Ambient dimension, must be a positive integer.
    radius : float
        Ball radius, must be nonnegative.

    Returns
    -------
    float
        Volume of the ball; 0.0 when radius is 0.
    """
    if not isinstance(dim, (int, np.integer)) or dim <= 0:
        raise ValueError(f"dim must be a positive integer, got {dim!r}")
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    return math.pi ** (dim / 2.0) * radius**dim / math.gamma(dim / 2.0 + 1.0)


def sample_uniform_ball(
    center: np.ndarray,
    radius: float,
    rng: np.random.Generator,
    size: int | None = None,
    metric: Metric = EUCLIDEAN,
) -> np.ndarray:
    """Draw uniformly from the interior of a Euclidean ball.

    A standard normal draw is normalized to a direction, then scaled by
    U^(1/dim) times the radius so that the radial profile matches the
    uniform distribution on the ball.

    Parameters
    ----------
    center : ndarray of shape (dim,)
        Ball center.
    radius : float
        Ball radius; radius 0 returns the center exactly.
    rng : numpy.random.Generator
        Source of randomness.
    size : int or None
        If None, return a single point of shape (dim,); otherwise return
        `size` points of shape (size, dim).

    Returns
    -------
    ndarray
        Uniform draw(s) from the ball.
    """
    if metric.kind != "euclidean":
        raise ValueError("uniform ball sampling is implemented for the Euclidean metric only")
    center = np.asarray(center, dtype=float)
    if center.ndim != 1:
        raise ValueError("center must be a 1-D vector")
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    dim = center.shape[0]
    n = 1 if size is None else int(size)
    if radius == 0.0:
        out = np.tile(center, (n, 1))
        return out[0] if size is None else out

    direction = rng.standard_normal((n, dim))
    norms = np.linalg.norm(direction, axis=1, keepdims=True)
    # A zero-norm Gaussian draw has probability zero; guard for safety.
    norms[norms == 0.0] = 1.0
    direction /= norms
    shell = rng.random((n, 1)) ** (1.0 / dim)
    points = center + radius * shell * direction
    return points[0] if size is None else points


def voronoi_owner(point: np.ndarray, centers: np.ndarray, metric: Metric = EUCLIDEAN) -> int:
    """Index of the center nearest to `point`, ties to the lowest index."""
    centers = np.asarray(centers, dtype=float)
    if centers.ndim != 2 or centers.shape[0] == 0:
        raise ValueError("centers must be a nonempty (k, dim) array")
    point = np.asarray(point, dtype=float)
    if point.shape != (centers.shape[1],):
        raise ValueError(f"dimension mismatch: point has {point.shape}, centers have dim {centers.shape[1]}")
    dists = metric.pairwise(point[None, :], centers)[0]
    return int(np.argmin(dists))


def voronoi_owners(points: np.ndarray, centers: np.ndarray, metric: Metric = EUCLIDEAN) -> np.ndarray:
    """Vectorized `voronoi_owner` over rows of `points`; ties to lowest index."""
    centers = np.asarray(centers, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if centers.ndim != 2 or centers.shape[0] == 0:
        raise ValueError("centers must be a nonempty (k, dim) array")
    if points.shape[1] != centers.shape[1]:
        raise ValueError(f"dimension mismatch: points have dim {points.shape[1]}, centers {centers.shape[1]}")
    return np.argmin(metric.pairwise(points, centers), axis=1)


def union_volume_estimate(
    centers: np.ndarray,
    radius: float,
    n_per_ball: int,
    rng: np.random.Generator,
    metric: Metric = EUCLIDEAN,
    _chunk: int = 16384,
) -> float:
    """Monte Carlo volume of a union of equal-radius balls.

    For each ball, points are sampled uniformly and a sample is counted
    only when the ball it was drawn from is its nearest center (ties to
    the lowest index), so overlap is deduplicated by Voronoi ownership.
    The estimate is the single-ball volume times the sum over balls of
    the counted fraction, and is unbiased for the union volume.

    Parameters
    ----------
    centers : ndarray of shape (k, dim)
        Ball centers.
    radius : float
        Common ball radius.
    n_per_ball : int
        Monte Carlo draws per ball; must be positive.
    rng : numpy.random.Generator
        Source of randomness.

    Returns
    -------
    float
        Estimated union volume, between one and k single-ball volumes
        (up to Monte Carlo noise in heavily overlapping configurations).
    """
    if metric.kind != "euclidean":
        raise ValueError("union volume estimation is implemented for the Euclidean metric only")
    centers = np.asarray(centers, dtype=float)
    if centers.ndim != 2 or centers.shape[0] == 0:
        raise ValueError("centers must be a nonempty (k, dim) array")
    if n_per_ball <= 0:
        raise ValueError(f"n_per_ball must be positive, got {n_per_ball}")
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if radius == 0.0:
        return 0.0

    k, dim = centers.shape
    vol_one = ball_volume(dim, radius)
    owned_fraction_sum = 0.0
    for i in range(k):
        hits = 0
        remaining = n_per_ball
        while remaining > 0:
            block = min(remaining, _chunk)
            pts = sample_uniform_ball(centers[i], radius, rng, size=block)
            owners = np.argmin(cdist(pts, centers), axis=1)
            hits += int(np.sum(owners == i))
            remaining -= block
        owned_fraction_sum += hits / n_per_ball
    return vol_one * owned_fraction_sum
