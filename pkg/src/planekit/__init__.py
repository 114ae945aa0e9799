"""planekit: geometric core for piece-wise planar reconstruction.

Plane-parameter algebra, cross-view feature warping, the training loss
suite with analytic gradients, instance soft-pooling, evaluation metrics,
and a synthetic planar-scene renderer that serves as the test oracle.
"""

from .errors import (
    DegenerateRayError,
    EmptyInstanceError,
    EmptyLossError,
    EmptyMetricError,
    InvalidInputError,
    PlanekitError,
    PlaneThroughOriginError,
)
from .geometry import (
    CameraIntrinsics,
    PlaneParams,
    RigidTransform,
    WarpGrid,
    backproject,
    backproject_map,
    bilinear_sample,
    compute_warp_grid,
    image_gradient,
    induced_depth_map,
    outprojection_mask,
    plane_induced_depth,
    subsample_map,
    transform_plane,
    transform_plane_map,
)
from .losses import (
    CategoryGrid,
    GradBuffer,
    LossReport,
    LossWeights,
    combined_loss,
    dice_loss,
    finite_diff_check,
    focal_loss_positive,
    l_depth,
    l_geom,
    l_plane,
    l_surface,
    total_plane_loss,
)
from .metrics import (
    DepthMetricsReport,
    DetectionReport,
    RecallCurve,
    average_precision,
    depth_metrics,
    detection_report,
    match_instances,
    mean_ap,
    pixel_recall_curve,
)
from .planehead import (
    AdamState,
    HeadGrads,
    PlaneHead,
    head_backward,
    head_forward,
    optimizer_step,
)
from .pooling import InstancePrediction, assemble_output, binarize, soft_pool
from .synth import (
    PlanarScene,
    PlaneRect,
    RenderedView,
    StereoSample,
    default_camera,
    drop_instances,
    generate_scene,
    look_pose,
    make_pair,
    render_view,
    sample_pose,
)
from .warpguide import (
    WarpGuidanceConfig,
    guidance_loss,
    make_features,
    self_loss,
    swap_sample,
    warp_features,
)

__version__ = "0.1.0"
