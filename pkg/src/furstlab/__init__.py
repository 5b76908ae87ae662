"""Numerical laboratory for random products of SL_d(R) matrices."""

__version__ = "0.1.0"

from .errors import FurstlabError
from .linalg import (
    Subspace,
    principal_angles,
    qr_positive,
    restricted_det,
    subspace_distance,
    subspace_intersect,
)
from .topology import (
    AdmissibleTopology,
    IntervalPartition,
    PairSet,
    chain_decompose,
    enumerate_admissible,
    filtered_from_partition,
    is_finer,
    one_step,
    removed_pairs,
)
from .flags import (
    Configuration,
    FiberChart,
    FlagPoint,
    PartialFlagPoint,
    assemble_config,
    config_distance,
    fiber_chart,
    fiber_metric,
    flag_from_matrix,
    general_position,
    invariant_rn_derivative,
    project_config,
    sample_invariant_flag,
)
from .walk import (
    LyapunovSpectrum,
    MatrixMeasure,
    MollifierSpec,
    OseledetsFrame,
    convergence_rate_probe,
    extend_configuration,
    lyapunov_spectrum,
    oseledets_frames,
    partial_sum_check,
)
from .clouds import (
    DimensionEstimate,
    PointCloud,
    condition_on_projection,
    knn_dimension,
    local_dimension,
    sample_stationary_cloud,
)
from .entropy import (
    EntropyEstimate,
    LyapunovDimensionProfile,
    furstenberg_bound,
    ly_report,
    lyapunov_profile,
    mollified_mi,
    rw_entropy,
)
from .presets import list_presets, load_preset
