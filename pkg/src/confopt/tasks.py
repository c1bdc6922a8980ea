"""Decision problems paired with the uncertainty machinery.

Two families: continuous knapsack (profit vector uncertain, budget row
known) and single-pair routing on a directed road network (edge traversal
times uncertain through a precipitation field).  Road networks live in a
small CSV format; precipitation fields are plain-text matrices with a
JSON bounding-box sidecar.  Routing exposes both a combinatorial solver
(Dijkstra) and the node-arc incidence form used by the flow polytope, and
the two must agree because the incidence matrix is totally unimodular.
"""

from __future__ import annotations

import csv
import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import GraphFormatError, InfeasibleError
from .samplers import ConditionalSampler, PrecipitationFieldSampler

# ---------------------------------------------------------------------------
# continuous knapsack


@dataclass(frozen=True)
class KnapsackInstance:
    """Item weights and budget for a continuous knapsack.

    The sampling rule keeps the budget between the heaviest single item
    and the total weight, so taking at least one full item is always
    feasible and taking everything never is.
    """

    p: np.ndarray
    budget: float

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 1 or p.size == 0 or np.any(p <= 0):
            raise ValueError("item weights must be a nonempty positive vector")
        object.__setattr__(self, "p", p)
        if not (p.max() <= self.budget <= p.sum() + 1e-9):
            raise ValueError(
                f"budget {self.budget} outside [max weight {p.max()}, total weight {p.sum()}]"
            )

    @property
    def n(self) -> int:
        return self.p.shape[0]


def sample_knapsack_instance(n: int, rng: np.random.Generator) -> KnapsackInstance:
    """Random knapsack: weights uniform on [0, 1000], budget between the
    heaviest item and the total minus a random fraction of the heaviest.

    When one item dominates, the budget interval can invert; such draws
    are rejected and redrawn.  With a single item the interval collapses
    and the budget equals that item's weight.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    for _ in range(1000):
        p = rng.uniform(0.0, 1000.0, size=n)
        if np.any(p <= 0):
            continue
        if n == 1:
            return KnapsackInstance(p, float(p[0]))
        u = float(rng.uniform())
        hi = float(p.sum() - u * p.max())
        if hi >= float(p.max()):
            return KnapsackInstance(p, float(rng.uniform(p.max(), hi)))
    raise RuntimeError("could not draw a feasible knapsack instance")


def nominal_knapsack(c: np.ndarray, instance: KnapsackInstance) -> tuple[np.ndarray, float]:
    """Exact continuous knapsack by profit-density greedy.

    Maximizes c . w over the unit box under the budget row, which the
    classic argument solves by filling items in decreasing c_i / p_i
    order (ties by index) and cutting the last one fractionally; items
    with nonpositive profit are left out.  Returns (w, -c . w) so the
    value is directly comparable with minimization objectives.
    """
    c = np.asarray(c, dtype=float)
    if c.shape != instance.p.shape:
        raise ValueError(f"profit vector has shape {c.shape}, expected {instance.p.shape}")
    w = np.zeros(instance.n)
    remaining = instance.budget
    order = np.argsort(-(c / instance.p), kind="stable")
    for i in order:
        if c[i] <= 0.0 or remaining <= 0.0:
            break
        take = min(1.0, remaining / instance.p[i])
        w[i] = take
        remaining -= take * instance.p[i]
    return w, float(-(c @ w))


# ---------------------------------------------------------------------------
# road networks


GRAPH_HEADER = ["src", "dst", "length_m", "speed_kmh", "category"]

# fallback speeds for synthetic generation, km/h by road category
CATEGORY_SPEEDS = {
    "residential": 30.0,
    "tertiary": 50.0,
    "secondary": 60.0,
    "primary": 80.0,
    "motorway": 100.0,
}


@dataclass
class Graph:
    """Directed road network with per-edge length, speed, and category."""

    edges: list[tuple[str, str]]
    length_m: np.ndarray
    speed_kmh: np.ndarray
    category: list[str]
    coords: dict[str, tuple[float, float]] | None = None
    nodes: list[str] = field(init=False)

    def __post_init__(self):
        self.length_m = np.asarray(self.length_m, dtype=float)
        self.speed_kmh = np.asarray(self.speed_kmh, dtype=float)
        n = len(self.edges)
        if not (len(self.length_m) == len(self.speed_kmh) == len(self.category) == n) or n == 0:
            raise ValueError("edge attribute lengths disagree or graph is empty")
        if np.any(self.length_m <= 0) or np.any(self.speed_kmh <= 0):
            raise ValueError("lengths and speeds must be positive")
        seen: dict[str, None] = {}
        for u, v in self.edges:
            seen.setdefault(u)
            seen.setdefault(v)
        self.nodes = list(seen)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def nominal_seconds(self) -> np.ndarray:
        """Free-flow traversal time per edge in seconds."""
        return 3.6 * self.length_m / self.speed_kmh


def ingest_graph(path: str | Path) -> Graph:
    """Read a road network CSV with schema src,dst,length_m,speed_kmh,category.

    Missing speeds are imputed with the mean speed of the same category;
    a category with no observed speed at all is an error, as is any
    malformed row (reported with its line number).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows or rows[0] != GRAPH_HEADER:
        raise GraphFormatError(f"expected header {','.join(GRAPH_HEADER)}", line=1)

    edges: list[tuple[str, str]] = []
    lengths: list[float] = []
    speeds: list[float | None] = []
    categories: list[str] = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 5:
            raise GraphFormatError(f"expected 5 fields, got {len(row)}", line=lineno)
        src, dst, length_s, speed_s, category = (f.strip() for f in row)
        if not src or not dst or not category:
            raise GraphFormatError("src, dst, and category must be nonempty", line=lineno)
        try:
            length = float(length_s)
        except ValueError:
            raise GraphFormatError(f"bad length {length_s!r}", line=lineno) from None
        if length <= 0:
            raise GraphFormatError(f"length must be positive, got {length}", line=lineno)
        if speed_s == "":
            speed = None
        else:
            try:
                speed = float(speed_s)
            except ValueError:
                raise GraphFormatError(f"bad speed {speed_s!r}", line=lineno) from None
            if speed <= 0:
                raise GraphFormatError(f"speed must be positive, got {speed}", line=lineno)
        edges.append((src, dst))
        lengths.append(length)
        speeds.append(speed)
        categories.append(category)

    by_cat: dict[str, list[float]] = {}
    for cat, speed in zip(categories, speeds):
        if speed is not None:
            by_cat.setdefault(cat, []).append(speed)
    filled: list[float] = []
    for lineno_offset, (cat, speed) in enumerate(zip(categories, speeds)):
        if speed is None:
            if cat not in by_cat:
                raise GraphFormatError(
                    f"cannot impute speed: category {cat!r} has no observed speeds",
                    line=lineno_offset + 2,
                )
            speed = float(np.mean(by_cat[cat]))
        filled.append(speed)
    return Graph(edges, np.array(lengths), np.array(filled), categories)


def write_graph_csv(graph: Graph, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(GRAPH_HEADER)
        for (src, dst), length, speed, cat in zip(
            graph.edges, graph.length_m, graph.speed_kmh, graph.category
        ):
            writer.writerow([src, dst, repr(float(length)), repr(float(speed)), cat])


def grid_graph(rows: int, cols: int, rng: np.random.Generator) -> Graph:
    """Synthetic grid road network with both directions of each street.

    Nodes sit at integer coordinates; each 4-neighbor street gets a
    random length near 100 m and a category-driven speed, shared by its
    two directed edges.
    """
    if rows < 2 or cols < 2:
        raise ValueError("grid must be at least 2x2")
    cats = sorted(CATEGORY_SPEEDS)
    edges: list[tuple[str, str]] = []
    lengths: list[float] = []
    speeds: list[float] = []
    categories: list[str] = []
    coords: dict[str, tuple[float, float]] = {}

    def name(r: int, c: int) -> str:
        return f"n{r}_{c}"

    for r in range(rows):
        for c in range(cols):
            coords[name(r, c)] = (float(c), float(r))
    for r in range(rows):
        for c in range(cols):
            for dr, dc in ((0, 1), (1, 0)):
                r2, c2 = r + dr, c + dc
                if r2 >= rows or c2 >= cols:
                    continue
                length = float(rng.uniform(80.0, 120.0))
                cat = cats[int(rng.integers(len(cats)))]
                speed = CATEGORY_SPEEDS[cat]
                for u, v in ((name(r, c), name(r2, c2)), (name(r2, c2), name(r, c))):
                    edges.append((u, v))
                    lengths.append(length)
                    speeds.append(speed)
                    categories.append(cat)
    return Graph(edges, np.array(lengths), np.array(speeds), categories, coords=coords)


def build_incidence(graph: Graph) -> tuple[np.ndarray, dict[str, int]]:
    """Node-arc incidence matrix: +1 where an edge leaves, -1 where it enters."""
    index = {node: i for i, node in enumerate(graph.nodes)}
    A = np.zeros((graph.n_nodes, graph.n_edges))
    for e, (u, v) in enumerate(graph.edges):
        A[index[u], e] = 1.0
        A[index[v], e] = -1.0
    return A, index


def demand_vector(graph: Graph, s: str, t: str) -> np.ndarray:
    """Unit-flow demand: +1 at the source, -1 at the sink."""
    if s == t:
        raise ValueError("source and sink must differ")
    index = {node: i for i, node in enumerate(graph.nodes)}
    for node in (s, t):
        if node not in index:
            raise ValueError(f"unknown node {node!r}")
    b = np.zeros(graph.n_nodes)
    b[index[s]] = 1.0
    b[index[t]] = -1.0
    return b


def shortest_path(graph: Graph, costs: np.ndarray, s: str, t: str) -> tuple[list[str], np.ndarray, float]:
    """Dijkstra on nonnegative edge costs.

    Returns the node path, the 0/1 edge-indicator vector of the path, and
    its cost.  Because the incidence matrix is totally unimodular, the
    indicator is also an optimal vertex of the unit-flow linear program.
    """
    costs = np.asarray(costs, dtype=float)
    if costs.shape != (graph.n_edges,):
        raise ValueError(f"costs must have shape ({graph.n_edges},)")
    if np.any(costs < 0):
        raise ValueError("edge costs must be nonnegative")
    if s == t:
        raise ValueError("source and sink must differ")
    adjacency: dict[str, list[tuple[int, str]]] = {}
    for e, (u, v) in enumerate(graph.edges):
        adjacency.setdefault(u, []).append((e, v))
    if s not in adjacency:
        raise InfeasibleError(f"no edges leave source {s!r}")

    dist: dict[str, float] = {s: 0.0}
    back: dict[str, tuple[str, int]] = {}
    done: set[str] = set()
    heap: list[tuple[float, str]] = [(0.0, s)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == t:
            break
        for e, v in adjacency.get(u, []):
            nd = d + costs[e]
            if v not in dist or nd < dist[v]:
                dist[v] = nd
                back[v] = (u, e)
                heapq.heappush(heap, (nd, v))
    if t not in done:
        raise InfeasibleError(f"sink {t!r} is unreachable from source {s!r}")

    path = [t]
    w = np.zeros(graph.n_edges)
    node = t
    while node != s:
        prev, e = back[node]
        w[e] = 1.0
        path.append(prev)
        node = prev
    path.reverse()
    return path, w, float(dist[t])


def dijkstra_potentials(graph: Graph, costs: np.ndarray, s: str) -> dict[str, float]:
    """Shortest-path distances from s to every reachable node."""
    costs = np.asarray(costs, dtype=float)
    adjacency: dict[str, list[tuple[int, str]]] = {}
    for e, (u, v) in enumerate(graph.edges):
        adjacency.setdefault(u, []).append((e, v))
    dist: dict[str, float] = {s: 0.0}
    done: set[str] = set()
    heap: list[tuple[float, str]] = [(0.0, s)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for e, v in adjacency.get(u, []):
            nd = d + costs[e]
            if v not in dist or nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


# ---------------------------------------------------------------------------
# precipitation rasters


@dataclass
class PrecipGrid:
    """Raster of precipitation intensities with a geographic bounding box."""

    values: np.ndarray  # (height, width)
    bbox: tuple[float, float, float, float]  # xmin, xmax, ymin, ymax

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("values must be a 2-D array")
        xmin, xmax, ymin, ymax = self.bbox
        if not (xmax >= xmin and ymax >= ymin):
            raise ValueError(f"invalid bbox {self.bbox}")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def write_precip_grid(grid: PrecipGrid, path: str | Path) -> None:
    """Plain-text matrix (one row per line) plus a JSON bbox sidecar."""
    path = Path(path)
    lines = [" ".join(repr(float(v)) for v in row) for row in grid.values]
    path.write_text("\n".join(lines) + "\n")
    xmin, xmax, ymin, ymax = grid.bbox
    sidecar = {"xmin": xmin, "xmax": xmax, "ymin": ymin, "ymax": ymax}
    Path(str(path) + ".bbox.json").write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")


def read_precip_grid(path: str | Path) -> PrecipGrid:
    path = Path(path)
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append([float(v) for v in line.split()])
        except ValueError:
            raise GraphFormatError(f"bad raster value in {path.name}", line=lineno) from None
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise GraphFormatError(f"raster {path.name} is empty or ragged")
    sidecar = json.loads(Path(str(path) + ".bbox.json").read_text())
    bbox = (sidecar["xmin"], sidecar["xmax"], sidecar["ymin"], sidecar["ymax"])
    return PrecipGrid(np.array(rows), bbox)


def pixel_lookup(
    xy: tuple[float, float], bbox: tuple[float, float, float, float], width: int, height: int
) -> tuple[int, int]:
    """Raster cell of a coordinate: scale into [0, 1], multiply by the raster
    size, floor, and clamp to the valid index range."""
    x, y = xy
    xmin, xmax, ymin, ymax = bbox
    span_x = xmax - xmin
    span_y = ymax - ymin
    px = 0 if span_x == 0 else int(math.floor((x - xmin) / span_x * width))
    py = 0 if span_y == 0 else int(math.floor((y - ymin) / span_y * height))
    return min(max(px, 0), width - 1), min(max(py, 0), height - 1)


def precip_to_edge_weights(grid: PrecipGrid, graph: Graph) -> np.ndarray:
    """Inflate nominal traversal times by precipitation at the endpoints.

    Each edge cost is its free-flow time in seconds times
    exp((Y[endpoint] + Y[other endpoint]) / 2), where Y is the raster
    value at the node's cell, so raster values act as log-scale
    multipliers; a zero field leaves the nominal costs unchanged.
    """
    if graph.coords is None:
        raise ValueError("graph has no node coordinates; cannot map onto the raster")
    nominal = graph.nominal_seconds()
    intensity = np.empty(graph.n_edges)
    cell: dict[str, float] = {}
    for node, xy in graph.coords.items():
        px, py = pixel_lookup(xy, grid.bbox, grid.width, grid.height)
        cell[node] = float(grid.values[py, px])
    for e, (u, v) in enumerate(graph.edges):
        intensity[e] = 0.5 * (cell[u] + cell[v])
    return nominal * np.exp(intensity)


# ---------------------------------------------------------------------------
# routing task assembly


def graph_bbox(graph: Graph) -> tuple[float, float, float, float]:
    if graph.coords is None:
        raise ValueError("graph has no node coordinates")
    xs = [xy[0] for xy in graph.coords.values()]
    ys = [xy[1] for xy in graph.coords.values()]
    return (min(xs), max(xs), min(ys), max(ys))


class EdgeWeightSampler(ConditionalSampler):
    """Conditional sampler over edge-weight space.

    Composes precipitation-field draws with the edge-weight mapping, so
    calibration and membership are scored directly in the space the
    decision problem consumes.
    """

    def __init__(self, field_sampler: PrecipitationFieldSampler, graph: Graph, bbox=None):
        self.field_sampler = field_sampler
        self.graph = graph
        self.bbox = graph_bbox(graph) if bbox is None else bbox
        self.dim_x = field_sampler.dim_x
        self.dim_c = graph.n_edges

    def _to_weights(self, flat_field: np.ndarray) -> np.ndarray:
        values = flat_field.reshape(self.field_sampler.height, self.field_sampler.width)
        return precip_to_edge_weights(PrecipGrid(values, self.bbox), self.graph)

    def sample(self, x, n, rng):
        fields = self.field_sampler.sample(x, n, rng)
        return np.stack([self._to_weights(f) for f in fields])

    def sample_joint(self, n, rng):
        xs, fields = self.field_sampler.sample_joint(n, rng)
        return xs, np.stack([self._to_weights(f) for f in fields])


@dataclass
class RoutingTask:
    """A grid road network, a source/sink pair, and the edge-weight sampler."""

    graph: Graph
    s: str
    t: str
    sampler: EdgeWeightSampler
    A: np.ndarray
    b: np.ndarray

    @classmethod
    def synthetic(cls, rows: int = 8, cols: int = 8, seed: int = 0, height: int = 16, width: int = 16, n_frames: int = 2) -> "RoutingTask":
        rng = np.random.default_rng([seed, 3])
        graph = grid_graph(rows, cols, rng)
        field_sampler = PrecipitationFieldSampler(height=height, width=width, n_frames=n_frames)
        sampler = EdgeWeightSampler(field_sampler, graph)
        s = "n0_0"
        t = f"n{rows - 1}_{cols - 1}"
        A, _ = build_incidence(graph)
        b = demand_vector(graph, s, t)
        return cls(graph, s, t, sampler, A, b)
