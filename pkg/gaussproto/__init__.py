"""
Gaussproto - Probabilistic pixel representations for semi-supervised segmentation

Gaussproto trains a small teacher-student segmentation network whose pixel
embeddings are diagonal Gaussians. Class prototypes are accumulated as
streaming Bayesian posteriors, and synthetic negatives are drawn from them
instead of keeping a memory bank. Everything runs on a deterministic
synthetic benchmark.

Main functions:
    - mls / mls_grad: Mutual likelihood score between two Gaussians
    - fuse: Precision-weighted fusion of several Gaussians
    - gdp_update / gdp_batch_oracle: Streaming and batch global prototypes
    - generate_vn: Virtual negatives around a global prototype
    - contrastive_loss: InfoNCE over mutual likelihood scores
    - generate / generate_splits: Synthetic dataset generation
    - miou / silhouette / davies_bouldin: Evaluation metrics
    - load_config: Read a key=value run configuration

Classes:
    - Trainer: The training loop for one configuration
    - PrototypeBank: Per-class prototypes with none/ema/gdp update rules
    - RunCache: Cache of finished ablation sub-runs
"""

__version__ = "0.1.0"

from .embedding import ProbRepr, ReprBatch, fuse, mls, mls_grad
from .prototypes import (
    GlobalPrototype,
    PrototypeBank,
    gdp_batch_oracle,
    gdp_update,
    local_prototype,
)
from .negatives import (
    MemoryBank,
    VirtualNegative,
    filter_valid,
    generate_vn,
    negative_class_distribution,
    sample_anchors,
    sample_real_negatives,
)
from .objective import (
    HyperParams,
    contrastive_loss,
    lambda_schedule,
    supervised_ce,
    total_loss,
    unsupervised_weighted_ce,
)
from .datagen import DatasetSpec, ToyScene, generate, generate_splits
from .metrics import ConfusionMatrix, davies_bouldin, miou, silhouette
from .config import RunConfig, load_config
from .core import Trainer, negative_state_bytes
from .readers import import_scenes, read_checkpoint
from .exporters import export_scenes, write_checkpoint
from .cache import RunCache, data_digest
from .errors import (
    CheckpointMismatch,
    ConfigError,
    ContractViolation,
    NumericFailure,
    ParseError,
)

__all__ = [
    "ProbRepr",
    "ReprBatch",
    "fuse",
    "mls",
    "mls_grad",
    "GlobalPrototype",
    "PrototypeBank",
    "gdp_batch_oracle",
    "gdp_update",
    "local_prototype",
    "MemoryBank",
    "VirtualNegative",
    "filter_valid",
    "generate_vn",
    "negative_class_distribution",
    "sample_anchors",
    "sample_real_negatives",
    "HyperParams",
    "contrastive_loss",
    "lambda_schedule",
    "supervised_ce",
    "total_loss",
    "unsupervised_weighted_ce",
    "DatasetSpec",
    "ToyScene",
    "generate",
    "generate_splits",
    "ConfusionMatrix",
    "davies_bouldin",
    "miou",
    "silhouette",
    "RunConfig",
    "load_config",
    "Trainer",
    "negative_state_bytes",
    "import_scenes",
    "read_checkpoint",
    "export_scenes",
    "write_checkpoint",
    "RunCache",
    "data_digest",
    "CheckpointMismatch",
    "ConfigError",
    "ContractViolation",
    "NumericFailure",
    "ParseError",
]
