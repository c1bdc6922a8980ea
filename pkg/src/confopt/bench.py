"""Shared benchmark pipeline: data splits, regions per method, decision batches.

Every CLI report path goes through here so that a given (task, seed,
config) triple always produces the same splits, the same calibrated
regions, and the same decision instances, regardless of which command
asked for them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conformal import (
    BallUnionScore,
    BoxScore,
    CalibratedRegion,
    ConditionalBoxScore,
    ConditionalEllipsoidScore,
    EllipsoidScore,
    calibrate,
)
from .config import RunConfig
from .report import format_mean_sd, mean_sd
from .robust import LINEAR_COST, LINEAR_PROFIT, AffineBox, BoxBudget, minimize_over_region, nominal_optimum, pessimism_gap
from .samplers import TASKS, ConditionalSampler, TwoMoonsSampler, make_sampler
from .tasks import RoutingTask, sample_knapsack_instance

# Region methods in reporting order; Nominal rides along in decision tables.
METHOD_ORDER = ("Box", "PTC-B", "Ellipsoid", "PTC-E", "CPO")
ALL_METHODS = METHOD_ORDER + ("Nominal",)


def derive_seed(*parts: int) -> int:
    """Independent child seed for a named substream."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass
class TaskData:
    """Deterministic splits for one (task, seed) pair."""

    cfg: RunConfig
    sampler: ConditionalSampler
    routing: RoutingTask | None
    x_train: np.ndarray
    c_train: np.ndarray
    x_cal: np.ndarray
    c_cal: np.ndarray
    x_cal2: np.ndarray
    c_cal2: np.ndarray
    x_test: np.ndarray
    c_test: np.ndarray

    @property
    def decision(self) -> str:
        return TASKS[self.cfg.task].decision


def build_sampler(cfg: RunConfig) -> tuple[ConditionalSampler, RoutingTask | None]:
    spec = TASKS[cfg.task]
    if spec.decision == "routing":
        task = RoutingTask.synthetic(
            rows=cfg.grid_rows,
            cols=cfg.grid_cols,
            seed=cfg.seed,
            height=cfg.raster,
            width=cfg.raster,
            n_frames=cfg.frames,
        )
        return task.sampler, task
    if cfg.task == "two_moons":
        return TwoMoonsSampler(tolerance=cfg.abc_tolerance, budget=cfg.abc_budget), None
    return make_sampler(cfg.task), None


def build_task_data(cfg: RunConfig) -> TaskData:
    sampler, routing = build_sampler(cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    x_train, c_train = sampler.sample_joint(cfg.n_train, rng)
    x_cal, c_cal = sampler.sample_joint(cfg.n_cal, rng)
    x_cal2, c_cal2 = sampler.sample_joint(cfg.n_cal2, rng)
    x_test, c_test = sampler.sample_joint(cfg.n_test, rng)
    return TaskData(cfg, sampler, routing, x_train, c_train, x_cal, c_cal, x_cal2, c_cal2, x_test, c_test)


def build_score(cfg: RunConfig, method: str, data: TaskData):
    seed = derive_seed(cfg.seed, 2, METHOD_ORDER.index(method))
    if method == "CPO":
        return BallUnionScore(data.sampler, cfg.k, seed)
    if method == "Box":
        return BoxScore.fit(data.c_train)
    if method == "Ellipsoid":
        return EllipsoidScore.fit(data.c_train)
    if method == "PTC-B":
        return ConditionalBoxScore.fit(data.sampler, cfg.k, seed, data.c_train)
    if method == "PTC-E":
        return ConditionalEllipsoidScore(data.sampler, max(cfg.k, 2), seed)
    raise ValueError(f"unknown method {method!r}")


def build_regions(cfg: RunConfig, data: TaskData, methods=METHOD_ORDER) -> dict[str, CalibratedRegion]:
    return {m: calibrate(build_score(cfg, m, data), data.x_cal, data.c_cal, cfg.alpha) for m in methods}


@dataclass
class DecisionInstance:
    index: int
    x: np.ndarray
    c_true: np.ndarray
    feasible: object


def decision_instances(cfg: RunConfig, data: TaskData, n: int) -> tuple[object, list[DecisionInstance]]:
    """Fresh decision problems paired with (context, realized outcome) draws."""
    rng = np.random.default_rng([cfg.seed, 4])
    xs, cs = data.sampler.sample_joint(n, rng)
    instances = []
    if data.decision == "routing":
        obj = LINEAR_COST
        feasible = AffineBox(data.routing.A, data.routing.b)
        for i in range(n):
            instances.append(DecisionInstance(i, xs[i], cs[i], feasible))
    else:
        obj = LINEAR_PROFIT
        for i in range(n):
            inst = sample_knapsack_instance(data.sampler.dim_c, rng)
            instances.append(DecisionInstance(i, xs[i], cs[i], BoxBudget(inst.p, inst.budget)))
    return obj, instances


DECISION_HEADER = ("instance", "method", "robust_value", "nominal_value", "covered", "delta", "bound")


def decision_rows(cfg: RunConfig, data: TaskData, regions: dict[str, CalibratedRegion], n_instances: int):
    """Per-instance, per-method decision report rows plus raw solver results."""
    obj, instances = decision_instances(cfg, data, n_instances)
    rows = []
    results: dict[tuple[int, str], object] = {}
    for inst in instances:
        for m_idx, method in enumerate(METHOD_ORDER):
            result = minimize_over_region(
                regions[method],
                inst.x,
                obj,
                inst.feasible,
                steps=cfg.steps,
                eta=cfg.eta,
                seed=derive_seed(cfg.seed, 6, inst.index, m_idx),
            )
            gap = pessimism_gap(regions[method], inst.x, inst.c_true, obj, inst.feasible, result=result)
            results[(inst.index, method)] = result
            rows.append((inst.index, method, gap.robust_value, gap.nominal_value, gap.covered, gap.delta, gap.bound))
        _, v_nom = nominal_optimum(obj, inst.feasible, inst.c_true)
        rows.append((inst.index, "Nominal", v_nom, v_nom, True, 0.0, 0.0))
    return rows, results


def coverage_rows(regions: dict[str, CalibratedRegion], data: TaskData):
    return [(m, regions[m].coverage(data.x_test, data.c_test)) for m in regions]


def objective_summary(rows) -> list[tuple[str, float, float, str]]:
    """Mean (sd) of the robust objective per method over decision instances."""
    by_method: dict[str, list[float]] = {m: [] for m in ALL_METHODS}
    for row in rows:
        by_method[row[1]].append(float(row[2]))
    out = []
    for method in ALL_METHODS:
        values = by_method[method]
        if not values:
            continue
        mean, sd = mean_sd(values)
        out.append((method, mean, sd, format_mean_sd(mean, sd)))
    return out


def axis_labels(data: TaskData) -> list[str]:
    if data.decision == "routing":
        return [f"{u}->{v}" for u, v in data.routing.graph.edges]
    return [f"c{j}" for j in range(data.sampler.dim_c)]
