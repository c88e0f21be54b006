"""Multi-level random recursive encoding and multimodal fusion.

Pipeline stages on top of externally exported CNN activations: depth
colorization, level preprocessing with random weighted pooling, fixed
random recursive encoding, one-vs-rest linear SVM scoring, and soft-voting
fusion across levels and modalities.
"""

from .config import FusionPlan, ReportOptions, RunConfig, SplitSpec, load_config
from .depth import (
    CameraIntrinsics,
    DepthFrame,
    NormalImage,
    PointCloud,
    colorize_depth,
    depth_to_pointcloud,
    estimate_normals,
    fill_missing_depth,
    resize_center_crop_depthlike,
    standardize_depth,
    standardize_rgb,
)
from .encoder import (
    EncoderConfig,
    RandomRecursiveEncoder,
    RnnWeights,
    encode_batch,
    encode_level,
    encode_multilevel,
    encode_single,
    generate_weights,
)
from .errors import (
    ConfigurationError,
    RandrecError,
    ShapeError,
    StageError,
    TensorFormatError,
    UnsupportedDtypeError,
    ValidationError,
)
from .fusion import (
    ModalityWeights,
    average_vote,
    concat_levels,
    modality_weight_table,
    modality_weights,
    weighted_scores,
    weighted_vote,
)
from .pooling import (
    LevelPreprocessor,
    LevelSpec,
    PoolSpec,
    avg_pool,
    max_pool,
    preprocess_level,
    random_pool,
    reshape_to_form,
)
from .runner import (
    RunReport,
    pooling_ablation,
    reseed_stability,
    run_experiment,
)
from .svm import (
    LinearModel,
    LinearSVMClassifier,
    SvmConfig,
    confusion_matrix,
    decision_scores,
    per_category_accuracy,
    predict,
    topk_accuracy,
    train_ovr,
)
from .tensor_io import (
    ActivationTensor,
    DatasetManifest,
    SampleRecord,
    draw_heldout,
    load_manifest,
    make_instance_split,
    read_tensor,
    save_manifest,
    write_tensor,
)

__version__ = "0.1.0"
