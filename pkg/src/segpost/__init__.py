"""Post-processing for semantic segmentation probability maps.

Refines per-pixel class probabilities with ensemble voting, dense-CRF
mean-field inference (permutohedral-lattice accelerated), and
morphological cleanup, with mIoU evaluation and synthetic scenes for
end-to-end testing.
"""

from .core import (
    IGNORE_LABEL,
    LabelMap,
    ProbMap,
    RgbImage,
    UnaryMap,
    argmax_labels,
    probs_from_labels,
    unary_from_probs,
)
from .densecrf import (
    CrfParams,
    build_features,
    crf_refine,
    gaussian_filter_exact,
    meanfield_step,
)
from .ensemble import EnsembleConfig, average_probs, vote
from .errors import (
    BadMagicError,
    ConfigError,
    DimensionOverflowError,
    EmptyEvaluationError,
    FormatError,
    LabelRangeError,
    NumericsError,
    PaletteError,
    ParameterError,
    PngFormatError,
    SegpostError,
    ShapeMismatchError,
    TrailingDataError,
    TruncatedPayloadError,
    UnsupportedVersionError,
    ValidationError,
)
from .io import (
    Palette,
    colorize,
    read_labelmap_png,
    read_palette_csv,
    read_probmap,
    read_rgb_png,
    write_labelmap_png,
    write_palette_csv,
    write_probmap,
    write_rgb_png,
)
from .metrics import (
    ConfusionMatrix,
    EvalReport,
    accumulate,
    iou_per_class,
    miou,
    render_report,
)
from .morphology import (
    CleanupResult,
    ComponentMap,
    connected_components,
    mode_filter,
    remove_small_components,
)
from .permutohedral import FeatureSet, PermutohedralLattice, lattice_filter
from .pipeline import (
    MemberSource,
    MorphParams,
    PipelineConfig,
    PipelineResult,
    load_config,
    run_pipeline,
)
from .synth import (
    SceneSpec,
    corrupt_to_probs,
    corrupt_to_probs_logged,
    generate_scene,
    read_scene_bundle,
    write_scene_bundle,
)

__version__ = "0.1.0"
