"""Multi-view dynamic images for depth-video action recognition.

Turns depth videos into dynamic images seen from a fan of virtual
viewpoints, classifies them with a shared-convolution multi-stream
network plus a PCA/SVM stage, and ships the proposal, baseline, and
experiment machinery around that pipeline.
"""

from .depthio import (
    DatasetManifest,
    DepthVideo,
    SampleRecord,
    SplitSpec,
    SynthConfig,
    load_manifest,
    load_video,
    make_split,
    save_manifest,
    save_video,
    synth_dataset,
)
from .errors import ConfigError, DataError, MvdiError, NumericError
from .features import (
    PcaModel,
    SvmModel,
    concat_group_features,
    pca_fit,
    pca_transform,
    softmax_sum_fusion,
    svm_cv_select,
    svm_predict,
    svm_train,
)
from .minicnn import (
    ArchSpec,
    ConvLayerSpec,
    MultiStreamModel,
    TrainConfig,
    extract_feature,
    forward,
    init_model,
    load_model,
    save_model,
    train_round_robin,
)
from .pipeline import (
    PipelineConfig,
    RunReport,
    load_config,
    render_report,
    report_timings,
    run,
    run_ablation,
)
from .proposal import BBox, ProposalCube, boxes_from_skeleton, crop_video, extend_cube, merge_boxes
from .rankpool import (
    DynamicImage,
    PoolConfig,
    RankingVector,
    SegmentSpec,
    approx_rank_pool,
    compute_dmm,
    exact_rank_pool,
    extract_mvdi,
    prefix_means,
    score,
    temporal_segments,
    to_dynamic_image,
)
from .viewsynth import (
    ProjectionConfig,
    ViewGroup,
    ViewSpec,
    default_view_groups,
    project_video,
    reproject_frame,
    rotation_matrix,
)

__version__ = "0.1.0"
