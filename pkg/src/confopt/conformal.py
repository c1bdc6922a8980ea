"""Split-conformal calibration of sample-based uncertainty regions.

The central object is a nonconformity score.  The main score measures the
distance from an outcome to the nearest of K draws from a conditional
sampler, so its sublevel sets are unions of K balls.  Marginal box and
ellipsoid scores, and their conditional-center variants, serve as
baselines.  All scores are calibrated the same way: the score is evaluated
on held-out pairs and thresholded at the finite-sample conformal quantile,
which guarantees marginal coverage at the requested level whenever the
calibration pairs and the test pair are exchangeable.

K, the number of conditional draws, is selected by estimating the region
volume on a second held-out split and stopping once the volume curve
flattens.  Keeping the two splits disjoint is what preserves
exchangeability of the calibration scores, so `select_k` enforces it.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import EUCLIDEAN, Metric, union_volume_estimate


def point_key(x: np.ndarray) -> int:
    """Stable 64-bit key for a point, used to derive per-point substreams."""
    digest = hashlib.blake2b(np.ascontiguousarray(np.asarray(x, dtype=float)).tobytes(), digest_size=8)
    return int.from_bytes(digest.digest(), "big")


def gpcp_score(centers: np.ndarray, c: np.ndarray, metric: Metric = EUCLIDEAN) -> float:
    """Distance from `c` to the nearest row of `centers`.

    Parameters
    ----------
    centers : ndarray of shape (k, dim)
        Conditional draws acting as ball centers.
    c : ndarray of shape (dim,)
        Outcome to score.

    Returns
    -------
    float
        min_k d(centers[k], c); the sublevel set at threshold q is the
        union of the k balls of radius q.
    """
    centers = np.asarray(centers, dtype=float)
    c = np.asarray(c, dtype=float)
    if centers.ndim != 2 or centers.shape[0] == 0:
        raise ValueError("centers must be a nonempty (k, dim) array")
    if c.shape != (centers.shape[1],):
        raise ValueError(f"dimension mismatch: outcome has shape {c.shape}, centers have dim {centers.shape[1]}")
    return float(np.min(metric.pairwise(c[None, :], centers)[0]))


def conformal_quantile(scores: np.ndarray, alpha: float) -> float:
    """Finite-sample conformal quantile of calibration scores.

    Returns the r-th smallest score with r = ceil((n + 1) * (1 - alpha)),
    or +inf when r exceeds n (the calibration set is too small to certify
    the requested level).

    Parameters
    ----------
    scores : array-like of shape (n,)
        Calibration scores.
    alpha : float
        Miscoverage level in (0, 1).

    Returns
    -------
    float
        Threshold such that {score <= threshold} has probability at least
        1 - alpha for an exchangeable fresh pair.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 1 or scores.size == 0:
        raise ValueError("scores must be a nonempty 1-D array")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    n = scores.size
    rank = math.ceil((n + 1) * (1.0 - alpha))
    if rank > n:
        return math.inf
    return float(np.sort(scores)[rank - 1])


class BallUnionScore:
    """Nearest-conditional-draw score; regions are unions of K balls.

    For each query point x, K outcomes are drawn once from the conditional
    sampler with a substream derived from (seed, x) and cached, so scoring,
    membership, optimization, and representative points all see the same
    centers for the same x.
    """

    kind = "CPO"

    def __init__(self, sampler, k: int, seed: int, metric: Metric = EUCLIDEAN):
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        self.sampler = sampler
        self.k = int(k)
        self.seed = int(seed)
        self.metric = metric
        self._centers: dict[bytes, np.ndarray] = {}

    def centers(self, x: np.ndarray) -> np.ndarray:
        """K conditional draws for x, drawn once and cached."""
        x = np.asarray(x, dtype=float)
        key = x.tobytes()
        if key not in self._centers:
            rng = np.random.default_rng([self.seed, point_key(x)])
            draws = np.asarray(self.sampler.sample(x, self.k, rng), dtype=float)
            if draws.shape[0] != self.k:
                raise ValueError(f"sampler returned {draws.shape[0]} draws, expected {self.k}")
            self._centers[key] = draws
        return self._centers[key]

    def evaluate(self, x: np.ndarray, c: np.ndarray) -> float:
        return gpcp_score(self.centers(x), np.asarray(c, dtype=float), self.metric)

    def payload(self) -> dict:
        return {}


class BoxScore:
    """Marginal box score: scaled max coordinate deviation from a fixed center."""

    kind = "Box"

    def __init__(self, center: np.ndarray, scales: np.ndarray, metric: Metric = EUCLIDEAN):
        self.center = np.asarray(center, dtype=float)
        self.scales = np.asarray(scales, dtype=float)
        if self.center.shape != self.scales.shape or self.center.ndim != 1:
            raise ValueError("center and scales must be 1-D vectors of equal length")
        if np.any(self.scales <= 0):
            raise ValueError("scales must be positive")
        self.metric = metric

    SCALE_FLOOR = 1e-9

    @classmethod
    def fit(cls, c_train: np.ndarray, metric: Metric = EUCLIDEAN) -> "BoxScore":
        """Per-coordinate median center and half inter-decile range scale."""
        c_train = np.asarray(c_train, dtype=float)
        if c_train.ndim != 2 or c_train.shape[0] < 2:
            raise ValueError("need at least two training outcomes to fit a box score")
        center = np.median(c_train, axis=0)
        scales = 0.5 * (np.quantile(c_train, 0.9, axis=0) - np.quantile(c_train, 0.1, axis=0))
        return cls(center, np.maximum(scales, cls.SCALE_FLOOR), metric)

    def center_for(self, x: np.ndarray) -> np.ndarray:
        return self.center

    def evaluate(self, x: np.ndarray, c: np.ndarray) -> float:
        c = np.asarray(c, dtype=float)
        if c.shape != self.center.shape:
            raise ValueError("dimension mismatch")
        return float(np.max(np.abs(c - self.center) / self.scales))

    def payload(self) -> dict:
        return {"center": self.center.tolist(), "scales": self.scales.tolist()}


def _ridge(cov: np.ndarray) -> np.ndarray:
    """Stabilizing ridge proportional to the mean eigenvalue."""
    dim = cov.shape[0]
    tr = float(np.trace(cov))
    eps = 1e-6 * tr / dim if tr > 0 else 1e-12
    return cov + eps * np.eye(dim)


class EllipsoidScore:
    """Marginal ellipsoid score: Mahalanobis distance to the training mean."""

    kind = "Ellipsoid"

    def __init__(self, center: np.ndarray, shape: np.ndarray, metric: Metric = EUCLIDEAN):
        self.center = np.asarray(center, dtype=float)
        self.shape = np.asarray(shape, dtype=float)
        if self.shape.shape != (self.center.size, self.center.size):
            raise ValueError("shape matrix must be square and match the center dimension")
        self.metric = metric
        self._inv = np.linalg.inv(self.shape)

    @classmethod
    def fit(cls, c_train: np.ndarray, metric: Metric = EUCLIDEAN) -> "EllipsoidScore":
        c_train = np.asarray(c_train, dtype=float)
        if c_train.ndim != 2 or c_train.shape[0] < 2:
            raise ValueError("need at least two training outcomes to fit an ellipsoid score")
        center = np.mean(c_train, axis=0)
        cov = np.cov(c_train, rowvar=False)
        cov = np.atleast_2d(cov)
        return cls(center, _ridge(cov), metric)

    def center_for(self, x: np.ndarray) -> np.ndarray:
        return self.center

    def evaluate(self, x: np.ndarray, c: np.ndarray) -> float:
        d = np.asarray(c, dtype=float) - self.center
        if d.shape != self.center.shape:
            raise ValueError("dimension mismatch")
        return float(np.sqrt(d @ self._inv @ d))

    def payload(self) -> dict:
        return {"center": self.center.tolist(), "shape": self.shape.tolist()}


class ConditionalBoxScore:
    """Box score recentered per x at the mean of K conditional draws."""

    kind = "PTC-B"

    def __init__(self, sampler, k: int, seed: int, scales: np.ndarray, metric: Metric = EUCLIDEAN):
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        self.sampler = sampler
        self.k = int(k)
        self.seed = int(seed)
        self.scales = np.asarray(scales, dtype=float)
        if np.any(self.scales <= 0):
            raise ValueError("scales must be positive")
        self.metric = metric
        self._cache: dict[bytes, np.ndarray] = {}

    @classmethod
    def fit(cls, sampler, k: int, seed: int, c_train: np.ndarray, metric: Metric = EUCLIDEAN) -> "ConditionalBoxScore":
        marginal = BoxScore.fit(c_train, metric)
        return cls(sampler, k, seed, marginal.scales, metric)

    def center_for(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        key = x.tobytes()
        if key not in self._cache:
            rng = np.random.default_rng([self.seed, point_key(x)])
            draws = np.asarray(self.sampler.sample(x, self.k, rng), dtype=float)
            self._cache[key] = draws.mean(axis=0)
        return self._cache[key]

    def evaluate(self, x: np.ndarray, c: np.ndarray) -> float:
        center = self.center_for(x)
        c = np.asarray(c, dtype=float)
        if c.shape != center.shape:
            raise ValueError("dimension mismatch")
        return float(np.max(np.abs(c - center) / self.scales))

    def payload(self) -> dict:
        return {"scales": self.scales.tolist()}


class ConditionalEllipsoidScore:
    """Ellipsoid score with mean and covariance from K conditional draws per x."""

    kind = "PTC-E"

    def __init__(self, sampler, k: int, seed: int, metric: Metric = EUCLIDEAN):
        if k < 2:
            raise ValueError(f"conditional covariance needs k >= 2, got {k}")
        self.sampler = sampler
        self.k = int(k)
        self.seed = int(seed)
        self.metric = metric
        self._cache: dict[bytes, tuple[np.ndarray, np.ndarray]] = {}

    def moments_for(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Conditional mean and ridged covariance of the K draws at x."""
        x = np.asarray(x, dtype=float)
        key = x.tobytes()
        if key not in self._cache:
            rng = np.random.default_rng([self.seed, point_key(x)])
            draws = np.asarray(self.sampler.sample(x, self.k, rng), dtype=float)
            mean = draws.mean(axis=0)
            cov = _ridge(np.atleast_2d(np.cov(draws, rowvar=False)))
            self._cache[key] = (mean, cov)
        return self._cache[key]

    def center_for(self, x: np.ndarray) -> np.ndarray:
        return self.moments_for(x)[0]

    def evaluate(self, x: np.ndarray, c: np.ndarray) -> float:
        mean, cov = self.moments_for(x)
        d = np.asarray(c, dtype=float) - mean
        if d.shape != mean.shape:
            raise ValueError("dimension mismatch")
        return float(np.sqrt(d @ np.linalg.solve(cov, d)))

    def payload(self) -> dict:
        return {}


@dataclass
class CalibratedRegion:
    """A score together with its conformal threshold.

    The region at x is {c : score(x, c) <= q_hat}.  `q_hat` may be +inf
    when the calibration set was too small for the requested level; the
    region then contains everything and downstream optimization refuses
    to run on it.
    """

    score: object
    alpha: float
    q_hat: float
    n_cal: int
    lineage: dict = field(default_factory=dict)

    def contains(self, x: np.ndarray, c: np.ndarray) -> bool:
        return bool(self.score.evaluate(x, c) <= self.q_hat)

    def coverage(self, x_test: np.ndarray, c_test: np.ndarray) -> float:
        """Fraction of test pairs inside the region."""
        x_test = np.asarray(x_test, dtype=float)
        c_test = np.asarray(c_test, dtype=float)
        if len(x_test) != len(c_test) or len(x_test) == 0:
            raise ValueError("test inputs and outcomes must be nonempty and aligned")
        hits = sum(self.contains(x, c) for x, c in zip(x_test, c_test))
        return hits / len(x_test)


def calibrate(score, x_cal: np.ndarray, c_cal: np.ndarray, alpha: float, lineage: str = "cal1") -> CalibratedRegion:
    """Conformalize a score on held-out pairs.

    Parameters
    ----------
    score : score object
        Anything with an `evaluate(x, c)` method.
    x_cal, c_cal : ndarray
        Aligned calibration inputs and outcomes.
    alpha : float
        Miscoverage level in (0, 1).

    Returns
    -------
    CalibratedRegion
        Region with the finite-sample conformal threshold; coverage on an
        exchangeable test pair is at least 1 - alpha.
    """
    x_cal = np.asarray(x_cal, dtype=float)
    c_cal = np.asarray(c_cal, dtype=float)
    if len(x_cal) == 0 or len(x_cal) != len(c_cal):
        raise ValueError("calibration inputs and outcomes must be nonempty and aligned")
    scores = np.array([score.evaluate(x, c) for x, c in zip(x_cal, c_cal)])
    q_hat = conformal_quantile(scores, alpha)
    return CalibratedRegion(score, float(alpha), q_hat, len(x_cal), lineage={"calibration": lineage})


@dataclass
class KSelection:
    """Result of the volume-based choice of the number of conditional draws."""

    k_star: int
    converged: bool
    k_grid: np.ndarray
    q_hats: np.ndarray
    volumes: np.ndarray
    volume_by_point: np.ndarray
    epsilon: float
    audit: dict

    def volume_se(self) -> np.ndarray:
        """Standard error of each mean volume across the evaluation split."""
        n = self.volume_by_point.shape[1]
        return np.std(self.volume_by_point, axis=1, ddof=1) / math.sqrt(n)


def select_k(
    sampler,
    x_cal: np.ndarray,
    c_cal: np.ndarray,
    x_vol: np.ndarray,
    alpha: float = 0.05,
    k_max: int = 15,
    epsilon: float | None = None,
    n_per_ball: int = 1000,
    seed: int = 0,
    metric: Metric = EUCLIDEAN,
) -> KSelection:
    """Pick the number of conditional draws by flattening of the volume curve.

    For each K up to `k_max`, the union-of-balls score is calibrated on
    (`x_cal`, `c_cal`) and the mean region volume is estimated over the
    disjoint split `x_vol`.  The selected K is the smallest one whose
    volume differs from the next by at most `epsilon` (default: 1% of the
    K=1 volume); if none qualifies, `k_max` is returned with
    `converged=False`.

    Raises
    ------
    ValueError
        If the calibration and volume splits share a point; reusing pairs
        would break exchangeability of the calibration scores.
    """
    x_cal = np.asarray(x_cal, dtype=float)
    c_cal = np.asarray(c_cal, dtype=float)
    x_vol = np.asarray(x_vol, dtype=float)
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    cal_keys = {x.tobytes() for x in x_cal}
    vol_keys = {x.tobytes() for x in x_vol}
    if cal_keys & vol_keys:
        raise ValueError("calibration and volume splits must be disjoint")
    if len(x_vol) == 0:
        raise ValueError("volume split must be nonempty")

    k_grid = np.arange(1, k_max + 1)
    q_hats = np.empty(k_max)
    volume_by_point = np.empty((k_max, len(x_vol)))
    for i, k in enumerate(k_grid):
        per_k_seed = int(np.random.SeedSequence([int(seed), int(k)]).generate_state(1)[0])
        score = BallUnionScore(sampler, int(k), seed=per_k_seed, metric=metric)
        region = calibrate(score, x_cal, c_cal, alpha)
        q_hats[i] = region.q_hat
        if not math.isfinite(region.q_hat):
            volume_by_point[i, :] = np.inf
            continue
        for j, x in enumerate(x_vol):
            rng = np.random.default_rng([seed, 7, int(k), point_key(x)])
            volume_by_point[i, j] = union_volume_estimate(score.centers(x), region.q_hat, n_per_ball, rng, metric)
    volumes = volume_by_point.mean(axis=1)

    if epsilon is None:
        if not math.isfinite(volumes[0]):
            raise ValueError("cannot derive a default epsilon from an infinite K=1 volume")
        epsilon = 0.01 * volumes[0]

    k_star = int(k_max)
    converged = False
    for i in range(k_max - 1):
        if abs(volumes[i] - volumes[i + 1]) <= epsilon:
            k_star = int(k_grid[i])
            converged = True
            break

    audit = {
        "calibration_points": sorted(f"{point_key(x):016x}" for x in x_cal),
        "volume_points": sorted(f"{point_key(x):016x}" for x in x_vol),
    }
    return KSelection(k_star, converged, k_grid, q_hats, volumes, volume_by_point, float(epsilon), audit)


_SCORE_KINDS = {
    "CPO": BallUnionScore,
    "Box": BoxScore,
    "Ellipsoid": EllipsoidScore,
    "PTC-B": ConditionalBoxScore,
    "PTC-E": ConditionalEllipsoidScore,
}


def region_to_dict(region: CalibratedRegion) -> dict:
    score = region.score
    doc = {
        "schema": "region-v1",
        "score_kind": score.kind,
        "alpha": region.alpha,
        "q_hat": region.q_hat if math.isfinite(region.q_hat) else "inf",
        "n_cal": region.n_cal,
        "metric": getattr(score, "metric", EUCLIDEAN).kind,
        "k": getattr(score, "k", None),
        "seed": getattr(score, "seed", None),
        "lineage": region.lineage,
        "payload": score.payload(),
    }
    return doc


def region_to_json(region: CalibratedRegion) -> str:
    return json.dumps(region_to_dict(region), sort_keys=True, indent=2) + "\n"


def region_from_dict(doc: dict, sampler=None) -> CalibratedRegion:
    kind = doc["score_kind"]
    if kind not in _SCORE_KINDS:
        raise ValueError(f"unknown score kind {kind!r}; expected one of {sorted(_SCORE_KINDS)}")
    metric = Metric(doc.get("metric", "euclidean"))
    payload = doc["payload"]
    if kind == "CPO":
        if sampler is None:
            raise ValueError("a conditional sampler is required to load this region")
        score = BallUnionScore(sampler, int(doc["k"]), int(doc["seed"]), metric)
    elif kind == "Box":
        score = BoxScore(np.array(payload["center"]), np.array(payload["scales"]), metric)
    elif kind == "Ellipsoid":
        score = EllipsoidScore(np.array(payload["center"]), np.array(payload["shape"]), metric)
    elif kind == "PTC-B":
        if sampler is None:
            raise ValueError("a conditional sampler is required to load this region")
        score = ConditionalBoxScore(sampler, int(doc["k"]), int(doc["seed"]), np.array(payload["scales"]), metric)
    else:
        if sampler is None:
            raise ValueError("a conditional sampler is required to load this region")
        score = ConditionalEllipsoidScore(sampler, int(doc["k"]), int(doc["seed"]), metric)
    q_hat = math.inf if doc["q_hat"] == "inf" else float(doc["q_hat"])
    return CalibratedRegion(score, float(doc["alpha"]), q_hat, int(doc["n_cal"]), lineage=doc.get("lineage", {}))


def region_from_json(text: str, sampler=None) -> CalibratedRegion:
    return region_from_dict(json.loads(text), sampler=sampler)
