"""Calibrated sample-based uncertainty regions for robust decisions."""

from .conformal import (
    BallUnionScore,
    BoxScore,
    CalibratedRegion,
    ConditionalBoxScore,
    ConditionalEllipsoidScore,
    EllipsoidScore,
    KSelection,
    calibrate,
    conformal_quantile,
    gpcp_score,
    region_from_json,
    region_to_json,
    select_k,
)
from .geometry import (
    EUCLIDEAN,
    Ball,
    Metric,
    ball_volume,
    distance,
    sample_uniform_ball,
    union_volume_estimate,
    voronoi_owner,
    voronoi_owners,
)
from .reppoints import (
    RegionSample,
    RegionSummary,
    connected_components,
    grid_reference_rps,
    kmeans_pp,
    projection_variance,
    region_rps,
    rp_suboptimality,
    sample_union_uniform,
)
from .robust import (
    LINEAR_COST,
    LINEAR_PROFIT,
    AffineBox,
    Box01,
    BoxBudget,
    GeneralObjective,
    LinearObjective,
    OptResult,
    inner_max_ball,
    inner_max_box,
    inner_max_ellipsoid,
    inner_max_union,
    minimize_over_region,
    nominal_optimum,
    pessimism_gap,
    robust_minimize,
)
from .config import RunConfig, config_hash, resolve_config
from .samplers import TASKS, make_sampler
from .tasks import (
    Graph,
    KnapsackInstance,
    PrecipGrid,
    RoutingTask,
    build_incidence,
    grid_graph,
    ingest_graph,
    nominal_knapsack,
    pixel_lookup,
    precip_to_edge_weights,
    sample_knapsack_instance,
    shortest_path,
)

__version__ = "0.1.0"
