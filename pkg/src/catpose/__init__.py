"""Category-level 6D object pose and size estimation: geometry, losses and evaluation."""

from .errors import DegenerateConfigurationError, FitFailureError, InvalidInputError, ParseError
from .geometry import (
    CameraIntrinsics,
    OrientedBox3D,
    SimilarityTransform,
    bbox_diameter,
    chamfer_distance,
    compose,
    invert,
    nocs_normalize,
    resample,
    transform_points,
)
from .registration import CorrespondenceSet, PoseFitResult, RansacParams, ransac_fit, umeyama
from .symmetry import (
    CATEGORIES,
    MapResult,
    SymmetryClass,
    canonicalize_nocs_labels,
    map_rotation,
    symmetry_class_for,
    y_rotation,
)
from .losses import (
    LossWeights,
    loss_cd,
    loss_corr,
    loss_def,
    loss_entropy,
    nocs_coordinates,
    reconstruct_model,
    total_loss,
)
from .evaluation import (
    STANDARD_SPECS,
    Detection,
    EvaluationReport,
    GroundTruthInstance,
    ThresholdSpec,
    ap_curves,
    compute_ap,
    detection_box,
    evaluate_report,
    oriented_iou,
    reconstruction_metric,
    rotation_error,
    translation_error,
)
from .datagen import (
    SynthSceneConfig,
    backproject,
    builtin_prior,
    load_prior,
    mean_embedding,
    perturb_predictions,
    synth_scenes,
)

__version__ = "0.1.0"
