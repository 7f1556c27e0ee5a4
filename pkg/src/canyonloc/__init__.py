"""canyonloc: map-aided single-base-station localization in multipath scenes.

A geometric scene model answers ray-casting / mirror / incidence queries, a
specular tracer generates ground-truth multipath, a measurement layer adds
clock bias and SNR-driven noise, and a three-stage estimator (probabilistic
path association, RANSAC outlier rejection, bounded nonlinear least squares)
recovers the user position and clock bias. The bench module sweeps the whole
pipeline over transmit power and thresholds.
"""

from .constants import SPEED_OF_LIGHT, TOL, Tolerances
from .geometry import (
    Bounds,
    RayHit,
    Scene,
    SceneValidationError,
    Surface,
    cast_rays,
    find_surface,
    incidence_point,
    load_scene,
    mirror_point,
    save_scene,
    scene_from_dict,
    scene_to_dict,
    segment_occluded,
)
from .raytrace import (
    LOS,
    MULTI_BOUNCE,
    SINGLE_BOUNCE,
    PropagationPath,
    census,
    dump_paths_jsonl,
    generate_paths,
    load_paths_jsonl,
    trace_los,
    trace_reflections,
)
from .measurement import (
    ConfigError,
    LabeledMeasurement,
    NoiseModel,
    PathMeasurement,
    RadioConfig,
    TruthTag,
    noise_variances,
    path_snr,
    synthesize,
    with_tx_power,
)
from .association import (
    ASSIGNED,
    LOS_ORIGIN,
    REJECTED_LOW_SCORE,
    AssociationConfig,
    Hypothesis,
    associate_all,
    pick_los,
    sample_directions,
    score_surfaces,
)
from .solver import (
    InvalidStartError,
    ResidualProblem,
    SolveResult,
    numeric_jacobian,
    solve,
)
from .estimator import (
    Candidate,
    EstimationError,
    NotEnoughPathsError,
    RansacConfig,
    SolveDiagnostics,
    StateEstimate,
    estimate_minimal,
    predict_path,
    ransac_candidates,
    ransac_iterations,
    refine,
    residual_cost,
    run_ransac,
    select_winner,
)
from .bench import (
    BenchConfigError,
    ExperimentConfig,
    SweepResult,
    default_scene,
    load_config,
    metric_association_rate,
    metric_fa_md,
    metric_rmse,
    run_sweep,
    write_csvs,
)

__version__ = "0.1.0"
