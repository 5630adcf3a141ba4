"""attndistill: dataset distillation by matching the spatial- and
channel-attention statistics of randomly initialized ConvNets."""

__version__ = "0.1.0"

from .augment import AugmentConfig, AugParams, apply_aug, sample_aug
from .container import load_synthetic, save_synthetic
from .data import (
    LabeledImageSet,
    PreprocessRecord,
    SyntheticDataset,
    apply_preprocess,
    fit_zca,
    init_synthetic,
    invert_preprocess,
    load_dataset,
)
from .engine import DistillConfig, DistillState, distill, resume_checkpoint, step
from .evaluate import EvalProtocol, EvalReport, evaluate, random_baseline
from .losses import (
    AttentionVector,
    LossBreakdown,
    attention_matching_loss,
    channel_attention,
    mmd_loss,
    normalize_rows,
    spatial_attention,
    total_loss,
)
from .nas import NasResult, enumerate_search_space, rank_on_proxy, spearman
from .nets import ConvNetSpec, FeatureStack, Network, build_network, forward_features
