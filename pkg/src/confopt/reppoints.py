"""Representative points of union-of-ball regions.

A calibrated union region is summarized by a small set of points: the
region is sampled uniformly (per-ball draws, deduplicated by Voronoi
ownership), split into connected components, and each component gets a
share of the points proportional to its sample mass; within a component
the points come from k-means++ seeding plus Lloyd rounds and are snapped
to the nearest sampled member so every representative lies in the region.
Per-point dispersion is reported as coordinatewise squared-deviation sums
over each representative's Voronoi cell.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .conformal import BallUnionScore, CalibratedRegion
from .exceptions import UnboundedRegionError
from .geometry import sample_uniform_ball, voronoi_owners


@dataclass
class RegionSample:
    """Uniform sample of a union of equal-radius balls."""

    points: np.ndarray
    source_ball: np.ndarray
    centers: np.ndarray
    radius: float


def sample_union_uniform(
    centers: np.ndarray, radius: float, n_per_ball: int, rng: np.random.Generator
) -> RegionSample:
    """Sample uniformly from a union of equal-radius balls.

    Draws `n_per_ball` uniform points inside each ball and keeps a point
    only when the ball it came from is its nearest center (ties to the
    lowest index), so overlap regions are not over-represented and the
    retained points are uniform on the union.
    """
    centers = np.asarray(centers, dtype=float)
    if centers.ndim != 2 or centers.shape[0] == 0:
        raise ValueError("centers must be a nonempty (k, dim) array")
    if n_per_ball < 1:
        raise ValueError(f"n_per_ball must be >= 1, got {n_per_ball}")
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    kept = []
    sources = []
    for k in range(centers.shape[0]):
        pts = sample_uniform_ball(centers[k], radius, rng, size=n_per_ball)
        owners = np.argmin(cdist(pts, centers), axis=1)
        mine = pts[owners == k]
        kept.append(mine)
        sources.append(np.full(len(mine), k, dtype=int))
    points = np.concatenate(kept, axis=0)
    return RegionSample(points, np.concatenate(sources), centers, float(radius))


def query_ball(tree: cKDTree, point: np.ndarray, radius: float) -> list[int]:
    """Indices of stored points within distance `radius` of `point` (inclusive)."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    return sorted(tree.query_ball_point(np.asarray(point, dtype=float), radius))


def connected_components(points: np.ndarray, radius: float) -> np.ndarray:
    """Label points by the components of the strictly-closer-than-radius graph.

    Two points are adjacent when their distance is strictly below
    `radius`; neighbor lookups go through a kd-tree so the scan does not
    touch all pairs.  Labels are 0-based and ordered by first appearance.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("points must be a nonempty (n, dim) array")
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    n = points.shape[0]
    parent = np.arange(n)

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i: int, j: int) -> None:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    if n <= 2048:
        tree = cKDTree(points)
        for i in range(n):
            for j in tree.query_ball_point(points[i], radius):
                if j > i and float(np.linalg.norm(points[i] - points[j])) < radius:
                    # the tree query is inclusive; the edge criterion is strict
                    union(i, int(j))
    else:
        # Dense samples make the neighbor lists quadratic, so coarsen
        # first: cells of side radius / (2 sqrt(dim)) have diagonal
        # radius / 2, hence every cell is a clique of the strict-edge
        # graph, and an edge can only cross cells whose centers are
        # within radius + one diagonal.  Checking those cell pairs for
        # any pair of members strictly closer than the radius visits
        # each possible edge, so the partition matches the direct scan.
        side = radius / (2.0 * math.sqrt(points.shape[1]))
        keys, inverse = np.unique(np.floor(points / side).astype(np.int64), axis=0, return_inverse=True)
        members = [np.flatnonzero(inverse == g) for g in range(keys.shape[0])]
        for grp in members:
            for other in grp[1:]:
                union(int(grp[0]), int(other))
        cell_centers = (keys + 0.5) * side
        candidates = cKDTree(cell_centers).query_pairs(
            radius + side * math.sqrt(points.shape[1]), output_type="ndarray"
        )
        for a, b in candidates:
            if find(int(members[a][0])) == find(int(members[b][0])):
                continue
            block = points[members[b]]
            for start in range(0, members[a].shape[0], 512):
                chunk = points[members[a][start : start + 512]]
                if float(cdist(chunk, block).min()) < radius:
                    union(int(members[a][0]), int(members[b][0]))
                    break

    labels = np.empty(n, dtype=int)
    seen: dict[int, int] = {}
    for i in range(n):
        root = find(i)
        if root not in seen:
            seen[root] = len(seen)
        labels[i] = seen[root]
    return labels


def kmeans_pp(
    points: np.ndarray, k: int, rng: np.random.Generator, max_rounds: int = 100
) -> tuple[np.ndarray, np.ndarray]:
    """k-means++ seeding followed by Lloyd rounds until assignments fix.

    Returns (centers, labels); centers are cluster means, not member
    points.  With k equal to the number of points every point becomes its
    own center.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("points must be a nonempty (n, dim) array")
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")

    # seeding: first uniform, then proportional to squared distance to the
    # nearest chosen center
    idx = int(rng.integers(n))
    centers = [points[idx]]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = float(d2.sum())
        if total > 0.0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        centers.append(points[idx])
        d2 = np.minimum(d2, np.sum((points - centers[-1]) ** 2, axis=1))
    centers = np.stack(centers)

    labels = np.argmin(cdist(points, centers), axis=1)
    for _ in range(max_rounds):
        for j in range(k):
            mask = labels == j
            if mask.any():
                centers[j] = points[mask].mean(axis=0)
            else:
                # re-seed an empty cluster at the worst-served point
                dists = np.sum((points - centers[labels]) ** 2, axis=1)
                centers[j] = points[int(np.argmax(dists))]
        new_labels = np.argmin(cdist(points, centers), axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return centers, labels


def allocate_counts(sizes: np.ndarray, n_rp: int) -> np.ndarray:
    """Proportional allocation with largest-remainder rounding.

    Allocates min(n_rp, sum(sizes)) representatives across components in
    proportion to their sample sizes.  When n_rp covers every component,
    each nonempty component receives at least one; no component ever
    receives more than its size.
    """
    sizes = np.asarray(sizes, dtype=int)
    if sizes.ndim != 1 or sizes.size == 0 or np.any(sizes < 1):
        raise ValueError("sizes must be a nonempty vector of positive counts")
    if n_rp < 1:
        raise ValueError(f"n_rp must be >= 1, got {n_rp}")
    n_comp = sizes.size
    total = int(sizes.sum())
    target = min(int(n_rp), total)

    quotas = target * sizes / total
    counts = np.floor(quotas).astype(int)
    remainders = quotas - counts
    order = np.lexsort((np.arange(n_comp), -remainders))
    for i in order[: target - int(counts.sum())]:
        counts[i] += 1

    if n_rp >= n_comp:
        # every component is entitled to one representative
        while np.any((counts == 0) & (sizes > 0)):
            give = int(np.argmax((counts == 0) & (sizes > 0)))
            take = int(np.argmax(counts))
            counts[give] += 1
            counts[take] -= 1

    # never assign more representatives than a component has points
    while np.any(counts > sizes):
        over = int(np.argmax(counts - sizes))
        headroom = np.flatnonzero(counts < sizes)
        counts[over] -= 1
        if headroom.size:
            counts[headroom[int(np.argmax(remainders[headroom]))]] += 1
    return counts


@dataclass
class RegionSummary:
    """Representative points with their cells and dispersion."""

    rps: np.ndarray
    components: np.ndarray
    projection_variances: np.ndarray
    cells: list[np.ndarray]
    sample: RegionSample

    def to_dict(self) -> dict:
        return {
            "rps": self.rps.tolist(),
            "components": self.components.tolist(),
            "projection_variances": self.projection_variances.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def projection_variance(cell_points: np.ndarray, rp: np.ndarray, axis: int) -> float:
    """Sum of squared deviations of a cell from its representative along one axis."""
    cell_points = np.atleast_2d(np.asarray(cell_points, dtype=float))
    rp = np.asarray(rp, dtype=float)
    if not 0 <= axis < rp.size:
        raise ValueError(f"axis must be in [0, {rp.size}), got {axis}")
    if cell_points.shape[0] == 0:
        return 0.0
    return float(np.sum((cell_points[:, axis] - rp[axis]) ** 2))


def summarize_sample(
    sample: RegionSample,
    n_rp: int,
    seed: int = 0,
    connect_radius: float | None = None,
) -> RegionSummary:
    """Representative points of an already-sampled region."""
    radius = sample.radius if connect_radius is None else float(connect_radius)
    labels = connected_components(sample.points, radius)
    n_comp = int(labels.max()) + 1
    sizes = np.array([int(np.sum(labels == comp)) for comp in range(n_comp)])
    counts = allocate_counts(sizes, n_rp)

    rps = []
    components = []
    for comp in range(n_comp):
        if counts[comp] == 0:
            continue
        pts = sample.points[labels == comp]
        rng = np.random.default_rng([seed, 11, comp])
        centers, _ = kmeans_pp(pts, int(counts[comp]), rng)
        # snap each center to its nearest member so representatives lie in
        # the region itself
        snap = np.argmin(cdist(centers, pts), axis=1)
        for center_idx in range(centers.shape[0]):
            rps.append(pts[snap[center_idx]])
            components.append(comp)
    rps = np.stack(rps)
    components = np.asarray(components, dtype=int)

    owners = voronoi_owners(sample.points, rps)
    cells = [np.flatnonzero(owners == i) for i in range(rps.shape[0])]
    variances = np.zeros((rps.shape[0], sample.points.shape[1]))
    for i, cell in enumerate(cells):
        if cell.size:
            variances[i] = np.sum((sample.points[cell] - rps[i]) ** 2, axis=0)
    return RegionSummary(rps, components, variances, cells, sample)


def region_rps(
    region: CalibratedRegion,
    x: np.ndarray,
    n_rp: int = 5,
    n_per_ball: int = 1000,
    seed: int = 0,
    connect_radius: float | None = None,
) -> RegionSummary:
    """Representative points of a calibrated union region at query point x.

    Samples the region uniformly, splits it into connected components
    (edge criterion: distance strictly below the ball radius unless
    `connect_radius` overrides it), allocates `n_rp` points across
    components by sample mass, and runs k-means++ within each component.

    Raises
    ------
    UnboundedRegionError
        If the conformal threshold is infinite.
    """
    if not isinstance(region.score, BallUnionScore):
        raise TypeError("representative points are defined for union-of-ball regions")
    if not math.isfinite(region.q_hat):
        raise UnboundedRegionError(
            "the calibrated region is unbounded; increase alpha or enlarge the calibration set"
        )
    centers = region.score.centers(x)
    rng = np.random.default_rng([seed, 5])
    sample = sample_union_uniform(centers, region.q_hat, n_per_ball, rng)
    if sample.points.shape[0] == 0:
        raise RuntimeError("no region samples retained; increase n_per_ball")
    return summarize_sample(sample, n_rp, seed=seed, connect_radius=connect_radius)


def rp_suboptimality(
    candidate: np.ndarray, reference: np.ndarray, eval_points: np.ndarray
) -> float:
    """Mean extra distance to the candidate set relative to the reference set.

    Positive values mean the candidate summarizes the evaluation points
    worse than the reference; a candidate containing the reference can
    only do better, never worse.
    """
    candidate = np.atleast_2d(np.asarray(candidate, dtype=float))
    reference = np.atleast_2d(np.asarray(reference, dtype=float))
    eval_points = np.atleast_2d(np.asarray(eval_points, dtype=float))
    if eval_points.shape[0] == 0:
        raise ValueError("eval_points must be nonempty")
    d_candidate = cdist(eval_points, candidate).min(axis=1)
    d_reference = cdist(eval_points, reference).min(axis=1)
    return float(np.mean(d_candidate - d_reference))


def grid_reference_rps(
    region: CalibratedRegion, x: np.ndarray, n_rp: int, bins: int = 60, seed: int = 0
) -> np.ndarray:
    """Reference representatives from a dense grid over the region.

    The region's bounding box is discretized into `bins` cells per
    dimension, grid centers inside the region are kept, and the same
    component/allocation/k-means pipeline runs on them with several
    restarts.  Used as the comparison target when judging sampled
    representatives.
    """
    if not isinstance(region.score, BallUnionScore):
        raise TypeError("grid references are defined for union-of-ball regions")
    if not math.isfinite(region.q_hat):
        raise UnboundedRegionError("the calibrated region is unbounded")
    centers = region.score.centers(x)
    radius = region.q_hat
    lo = centers.min(axis=0) - radius
    hi = centers.max(axis=0) + radius
    axes = [np.linspace(lo[d], hi[d], bins + 1) for d in range(centers.shape[1])]
    mids = [0.5 * (a[:-1] + a[1:]) for a in axes]
    mesh = np.meshgrid(*mids, indexing="ij")
    grid = np.column_stack([m.ravel() for m in mesh])
    member = cdist(grid, centers).min(axis=1) <= radius
    grid = grid[member]
    if grid.shape[0] == 0:
        raise RuntimeError("no grid cell fell inside the region; increase bins")

    labels = connected_components(grid, radius)
    n_comp = int(labels.max()) + 1
    sizes = np.array([int(np.sum(labels == comp)) for comp in range(n_comp)])
    counts = allocate_counts(sizes, n_rp)

    rps = []
    for comp in range(n_comp):
        if counts[comp] == 0:
            continue
        pts = grid[labels == comp]
        best_centers, best_inertia = None, math.inf
        for restart in range(8):
            rng = np.random.default_rng([seed, 13, comp, restart])
            centers_r, labels_r = kmeans_pp(pts, int(counts[comp]), rng)
            inertia = float(np.sum((pts - centers_r[labels_r]) ** 2))
            if inertia < best_inertia:
                best_centers, best_inertia = centers_r, inertia
        snap = np.argmin(cdist(best_centers, pts), axis=1)
        rps.extend(pts[s] for s in snap)
    return np.stack(rps)
