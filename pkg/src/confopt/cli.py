"""Command line entry points.

Five subcommands share one configuration surface: `calibrate` writes a
region artifact, `select-k` runs the draw-count selection, `optimize`
solves decision instances against every method's region, `rps` extracts
representative points, and `bench` produces the coverage and objective
comparison.  Report paths write delimited tables plus SVG figures, all
stamped with the resolved config hash and seed; reruns with identical
settings reproduce every artifact byte for byte.

Exit codes: 0 success, 2 configuration or input error, 3 infeasible
problem or unbounded region, 4 numeric failure.  Failures print a
machine-readable JSON object to stderr.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .bench import (
    ALL_METHODS,
    DECISION_HEADER,
    METHOD_ORDER,
    axis_labels,
    build_regions,
    build_task_data,
    coverage_rows,
    decision_rows,
    objective_summary,
)
from .config import SCORE_KINDS, RunConfig, config_dict, config_hash, resolve_config
from .conformal import region_from_dict, region_to_dict, select_k
from .exceptions import (
    AbcBudgetError,
    ConfigError,
    GraphFormatError,
    InfeasibleError,
    ProjectionError,
    UnboundedRegionError,
)
from .plots import method_bar_figure, rp_scatter_figure, save_figure, variance_bar_figure, volume_curve_figure
from .report import jsonable, render_table, write_csv, write_json
from .reppoints import region_rps

_EXIT_CODES = (
    (ConfigError, 2),
    (GraphFormatError, 2),
    (InfeasibleError, 3),
    (UnboundedRegionError, 3),
    (ProjectionError, 4),
    (AbcBudgetError, 4),
    (np.linalg.LinAlgError, 4),
    (FloatingPointError, 4),
)


def _handled(fn):
    """Map library failures to exit codes with a JSON diagnostic on stderr."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except tuple(exc for exc, _ in _EXIT_CODES) as err:
            code = next(code for exc, code in _EXIT_CODES if isinstance(err, exc))
            doc = {"error": type(err).__name__, "message": str(err), "exit_code": code}
            if isinstance(err, AbcBudgetError):
                doc.update(
                    n_accepted=err.n_accepted,
                    n_requested=err.n_requested,
                    n_simulations=err.n_simulations,
                    tolerance=err.tolerance,
                )
            click.echo(json.dumps(jsonable(doc), sort_keys=True), err=True)
            sys.exit(code)

    return wrapper


def _common_options(fn):
    options = [
        click.option("--config", type=click.Path(dir_okay=False), default=None, help="Flat JSON config file; flags override its values."),
        click.option("--task", type=str, default=None, help="Task name from the registry."),
        click.option("--alpha", type=float, default=None, help="Miscoverage level."),
        click.option("--k", type=int, default=None, help="Conditional draws per context."),
        click.option("--k-max", type=int, default=None, help="Largest K tried by select-k."),
        click.option("--epsilon", type=float, default=None, help="Volume flattening threshold (select-k) or target accuracy."),
        click.option("--samples-per-ball", type=int, default=None, help="Monte Carlo points per ball for volumes and RP sampling."),
        click.option("--steps", type=int, default=None, help="Subgradient steps per solve."),
        click.option("--eta", type=str, default=None, help="Step size, or 'auto'."),
        click.option("--rp-count", type=int, default=None, help="Number of representative points."),
        click.option("--seed", type=int, default=None, help="Root seed; all randomness derives from it."),
        click.option("--score", type=click.Choice(SCORE_KINDS), default=None, help="Region method for calibrate."),
        click.option("--x-index", type=int, default=None, help="Which test context rps should describe."),
        click.option("--n-train", type=int, default=None, help="Training pairs for the unconditional baselines."),
        click.option("--n-cal", type=int, default=None, help="Calibration pairs."),
        click.option("--n-cal2", type=int, default=None, help="Volume-evaluation pairs for select-k."),
        click.option("--n-test", type=int, default=None, help="Held-out pairs for coverage."),
        click.option("--n-instances", type=int, default=None, help="Decision instances for optimize/bench."),
        click.option("--grid-rows", type=int, default=None, help="Road grid rows (routing tasks)."),
        click.option("--grid-cols", type=int, default=None, help="Road grid columns (routing tasks)."),
        click.option("--raster", type=int, default=None, help="Precipitation raster size (routing tasks)."),
        click.option("--frames", type=int, default=None, help="Context frames per precipitation draw."),
        click.option("--abc-tolerance", type=float, default=None, help="Acceptance tolerance for rejection sampling tasks."),
        click.option("--abc-budget", type=int, default=None, help="Simulation budget per context for rejection sampling."),
        click.option("--connect-radius", type=float, default=None, help="Connectivity radius for component splitting."),
        click.option("--out", type=str, default=None, help="Output directory."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _resolve(config: str | None, overrides: dict) -> tuple[RunConfig, str, Path]:
    cfg = resolve_config(config, overrides)
    digest = config_hash(cfg)
    out_dir = Path(cfg.out)
    return cfg, digest, out_dir


def _load_region_artifact(path: str, cfg: RunConfig, sampler):
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"region artifact not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"region artifact {path} is not valid JSON: {err}") from None
    inner = doc.get("region", doc)
    task = doc.get("task")
    if task is not None and task != cfg.task:
        raise ConfigError(f"region artifact was calibrated for task {task!r}, current task is {cfg.task!r}")
    try:
        return region_from_dict(inner, sampler=sampler)
    except (KeyError, ValueError) as err:
        raise ConfigError(f"region artifact {path} is malformed: {err}") from None


@click.group()
@click.version_option(__version__)
def main():
    """Conformal prediction regions for downstream robust decisions."""


@main.command()
@_common_options
@_handled
def calibrate(config, **overrides):
    """Calibrate one region method and write the region artifact."""
    cfg, digest, out_dir = _resolve(config, overrides)
    data = build_task_data(cfg)
    region = build_regions(cfg, data, methods=(cfg.score,))[cfg.score]
    doc = {"schema": "region-artifact-v1", "task": cfg.task, "region": region_to_dict(region)}
    path = write_json(out_dir / "region.json", doc, config_hash=digest, seed=cfg.seed)
    q = region.q_hat if region.q_hat != float("inf") else "inf"
    click.echo(f"calibrated {cfg.score} on {cfg.n_cal} pairs at alpha={cfg.alpha}: q_hat={q}")
    click.echo(f"wrote {path}")


@main.command("select-k")
@_common_options
@_handled
def select_k_cmd(config, **overrides):
    """Choose the number of conditional draws from the volume curve."""
    cfg, digest, out_dir = _resolve(config, overrides)
    data = build_task_data(cfg)
    sel = select_k(
        data.sampler,
        data.x_cal,
        data.c_cal,
        data.x_cal2,
        alpha=cfg.alpha,
        k_max=cfg.k_max,
        epsilon=cfg.epsilon,
        n_per_ball=cfg.samples_per_ball,
        seed=cfg.seed,
    )
    ses = sel.volume_se()
    rows = list(zip(sel.k_grid.tolist(), sel.q_hats.tolist(), sel.volumes.tolist(), ses.tolist()))
    csv_path = write_csv(out_dir / "k_selection.csv", ("k", "q_hat", "volume", "volume_se"), rows,
                         config_hash=digest, seed=cfg.seed)
    doc = {
        "task": cfg.task,
        "k_star": sel.k_star,
        "converged": sel.converged,
        "epsilon": sel.epsilon,
        "k_grid": sel.k_grid,
        "q_hats": sel.q_hats,
        "volumes": sel.volumes,
        "volume_se": ses,
        "audit": sel.audit,
    }
    json_path = write_json(out_dir / "k_selection.json", jsonable(doc), config_hash=digest, seed=cfg.seed)
    fig_path = save_figure(volume_curve_figure(sel.k_grid, sel.volumes, ses, sel.k_star),
                           out_dir / "volume_curve.svg", config_hash=digest, seed=cfg.seed)
    click.echo(f"selected K={sel.k_star} (converged={sel.converged}, epsilon={sel.epsilon:.6g})")
    for path in (csv_path, json_path, fig_path):
        click.echo(f"wrote {path}")


@main.command()
@click.option("--region", "region_path", type=click.Path(dir_okay=False), default=None,
              help="Region artifact from calibrate; replaces the matching method's freshly calibrated region.")
@_common_options
@_handled
def optimize(config, region_path, **overrides):
    """Solve decision instances robustly against every method's region."""
    cfg, digest, out_dir = _resolve(config, overrides)
    data = build_task_data(cfg)
    regions = build_regions(cfg, data)
    if region_path is not None:
        loaded = _load_region_artifact(region_path, cfg, data.sampler)
        regions[loaded.score.kind] = loaded
    rows, results = decision_rows(cfg, data, regions, cfg.n_instances)
    csv_path = write_csv(out_dir / "decision_report.csv", DECISION_HEADER, rows,
                         config_hash=digest, seed=cfg.seed)
    first_cpo = results[(0, "CPO")]
    json_path = write_json(out_dir / "opt_result.json", {"result": jsonable(first_cpo.to_dict())},
                           config_hash=digest, seed=cfg.seed)
    summary = objective_summary(rows)
    fig = method_bar_figure([r[0] for r in summary], [r[1] for r in summary],
                            "mean robust objective", errors=[r[2] for r in summary])
    fig_path = save_figure(fig, out_dir / "objective_bars.svg", config_hash=digest, seed=cfg.seed)
    click.echo(render_table(("method", "objective"), [(m, cell) for m, _, _, cell in summary]))
    for path in (csv_path, json_path, fig_path):
        click.echo(f"wrote {path}")


@main.command()
@click.option("--region", "region_path", type=click.Path(dir_okay=False), default=None,
              help="Region artifact from calibrate (must be the union-of-balls method).")
@_common_options
@_handled
def rps(config, region_path, **overrides):
    """Extract representative points of the region at one test context."""
    cfg, digest, out_dir = _resolve(config, overrides)
    data = build_task_data(cfg)
    if region_path is not None:
        region = _load_region_artifact(region_path, cfg, data.sampler)
        if region.score.kind != "CPO":
            raise ConfigError(f"representative points need the union-of-balls region, got {region.score.kind!r}")
    else:
        region = build_regions(cfg, data, methods=("CPO",))["CPO"]
    if cfg.x_index >= len(data.x_test):
        raise ConfigError(f"x_index {cfg.x_index} out of range for n_test={cfg.n_test}")
    x = data.x_test[cfg.x_index]
    summary = region_rps(
        region,
        x,
        n_rp=cfg.rp_count,
        n_per_ball=cfg.samples_per_ball,
        seed=cfg.seed,
        connect_radius=cfg.connect_radius,
    )
    labels = axis_labels(data)
    doc = dict(summary.to_dict(), task=cfg.task, x_index=cfg.x_index, x=x, q_hat=region.q_hat)
    json_path = write_json(out_dir / "rps.json", jsonable(doc), config_hash=digest, seed=cfg.seed)
    var_rows = []
    for i in range(len(summary.rps)):
        for j, label in enumerate(labels):
            var_rows.append((i, int(summary.components[i]), j, label, float(summary.projection_variances[i, j])))
    csv_path = write_csv(out_dir / "rp_variances.csv", ("rp", "component", "axis", "label", "variance"),
                         var_rows, config_hash=digest, seed=cfg.seed)
    paths = [json_path, csv_path]
    owners = np.empty(len(summary.sample.points), dtype=int)
    for j, cell in enumerate(summary.cells):
        owners[cell] = j
    if data.sampler.dim_c == 2:
        fig = rp_scatter_figure(summary.sample.points, summary.rps, owners)
        paths.append(save_figure(fig, out_dir / "rp_scatter.svg", config_hash=digest, seed=cfg.seed))
    fig = variance_bar_figure(summary.projection_variances, labels if len(labels) <= 20 else None)
    paths.append(save_figure(fig, out_dir / "rp_variance_bars.svg", config_hash=digest, seed=cfg.seed))
    n_comp = len(set(summary.components.tolist()))
    click.echo(f"{len(summary.rps)} representative points across {n_comp} component(s)")
    for path in paths:
        click.echo(f"wrote {path}")


@main.command()
@_common_options
@_handled
def bench(config, **overrides):
    """Coverage and robust-objective comparison across all methods."""
    cfg, digest, out_dir = _resolve(config, overrides)
    data = build_task_data(cfg)
    regions = build_regions(cfg, data)
    cov_rows = coverage_rows(regions, data)
    rows, _ = decision_rows(cfg, data, regions, cfg.n_instances)
    summary = objective_summary(rows)

    cov_path = write_csv(out_dir / "bench_coverage.csv", ("method", "coverage"), cov_rows,
                         config_hash=digest, seed=cfg.seed)
    obj_path = write_csv(out_dir / "bench_objective.csv", ("method", "mean", "sd", "summary"), summary,
                         config_hash=digest, seed=cfg.seed)
    doc = {
        "task": cfg.task,
        "alpha": cfg.alpha,
        "n_test": cfg.n_test,
        "n_instances": cfg.n_instances,
        "coverage": {m: c for m, c in cov_rows},
        "objective": {m: {"mean": mean, "sd": sd} for m, mean, sd, _ in summary},
    }
    json_path = write_json(out_dir / "bench.json", jsonable(doc), config_hash=digest, seed=cfg.seed)
    cov_fig = method_bar_figure([m for m, _ in cov_rows], [c for _, c in cov_rows],
                                "empirical coverage", target=1 - cfg.alpha)
    cov_fig_path = save_figure(cov_fig, out_dir / "bench_coverage.svg", config_hash=digest, seed=cfg.seed)
    obj_fig = method_bar_figure([r[0] for r in summary], [r[1] for r in summary],
                                "mean robust objective", errors=[r[2] for r in summary])
    obj_fig_path = save_figure(obj_fig, out_dir / "bench_objective.svg", config_hash=digest, seed=cfg.seed)

    click.echo(render_table(("method", "coverage"), [(m, f"{c:.4f}") for m, c in cov_rows]))
    click.echo("")
    click.echo(render_table(("method", "objective"), [(m, cell) for m, _, _, cell in summary]))
    for path in (cov_path, obj_path, json_path, cov_fig_path, obj_fig_path):
        click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
