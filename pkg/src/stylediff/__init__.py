"""Style-guided diffusion generation of multivariate time series."""

from .backbone import (
    BackboneTrainConfig,
    Denoiser,
    DenoiserConfig,
    NoiseSchedule,
    build_denoiser,
    denoise,
    edm_loss,
    heun_step,
    sample_unguided,
    sigma_steps,
    train_backbone,
)
from .data import (
    NormalizationState,
    csv_ingest,
    denormalize,
    fit_normalization,
    normalize,
    sine_generate,
    slide_windows,
)
from .decompose import (
    DataStyle,
    StlParams,
    StyleComponents,
    extract_style,
    fourier_split,
    stl_decompose,
)
from .errors import (
    ChecksumError,
    ConfigError,
    FormatError,
    GatingError,
    InsufficientDataError,
    MagicError,
    ParseError,
    StyleDiffError,
    TransformError,
    ValidationError,
    VersionError,
)
from .guidance import (
    GuidanceConfig,
    GuidanceNet,
    GuidanceTrainConfig,
    KernelConfig,
    StyleLibrary,
    build_guidance,
    build_style_library,
    guidance_input,
    guide_component,
    sample_guided,
    thd_step,
    train_guidance,
)
from .metrics import (
    EvalConfig,
    MetricReport,
    discriminative_score,
    js_divergence,
    kl_divergence,
    ks_statistic,
    metric_report,
    pca_project,
    predictive_score,
    wasserstein1,
)
from .storage import (
    load_backbone,
    load_checkpoint,
    load_dataset,
    load_guidance,
    save_backbone,
    save_checkpoint,
    save_dataset,
    save_guidance,
)
from .transform import TransformParams, from_image, to_image

__version__ = "0.1.0"
