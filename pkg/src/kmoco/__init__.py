"""k-space motion artifact simulation, detection, and correction toolkit."""

from .correction import (
    CorrectorConfig,
    FeatureExtractor,
    LossWeights,
    apply_corrector,
    build_corrector,
    dc_loss,
    hard_dc_project,
    l1_loss,
    lpips_loss,
    project_lines,
    total_loss,
)
from .detection import (
    DetectorConfig,
    ScoreMap,
    bce_loss,
    build_detector,
    detect,
    dice_loss,
    oracle_detector,
    seg_loss,
    spatial_average,
    threshold_mask,
)
from .fieldcore import (
    ImageMeta,
    KSpace,
    RealImage,
    RigidMotion,
    apply_rigid_k,
    fft2c,
    ifft2c,
    rotate,
    translate,
)
from .metrics import MetricReport, nmse, psnr, ssim
from .motionsim import (
    PRESETS,
    LineMask,
    MotionEvent,
    SeverityPreset,
    SlabSpec,
    build_line_mask,
    corrupt,
    sample_event,
    sample_events,
    severity_suite,
)
from .phantom import perturbed_phantom, phantom
from .stats import TestResult, anova_oneway, bootstrap_ci, tukey_hsd

__version__ = "0.1.0"
