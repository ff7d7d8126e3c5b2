"""Category information amounts from streaming covariance statistics.

The package measures how much embedding volume each category occupies
(half the log-determinant of its shrinkage-clipped covariance), keeps the
required per-category statistics exactly under a bounded-memory streaming
queue, turns the measurements into pairwise angular margins for a cosine
classifier, and plans the queue length that minimizes the storage ratio.
A desk-scale synthetic trainer demonstrates the bias diagnostics end to
end. See the `infomargin` CLI for the file-level workflow.
"""

from .errors import InputError, NumericalError, TrainingDivergedError
from .stats import (
    CategoryStats,
    EmbeddingQueue,
    EmbeddingRecord,
    EpochAccumulator,
    GlobalStats,
    LocalStats,
    compute_local_stats,
    epoch_finalize,
    merge_stats,
)
from .info import (
    InfoAmountTable,
    ShrinkageSpec,
    information_amount,
    information_amount_from_embeddings,
    information_amounts_from_stats,
    shrink_covariance,
)
from .loss import (
    CosineClassifier,
    InfoNormalization,
    LossBatch,
    LossOutput,
    MarginMatrix,
    build_margins,
    ce_batch,
    ce_forward,
    igam_backward,
    igam_batch,
    igam_forward,
    normalize_info,
    normface_batch,
    normface_forward,
)
from .planner import (
    PlanInput,
    PlanResult,
    memory_report,
    optimal_queue_length,
    storage_ratio,
)
from .trainer import (
    Dataset,
    EpochReport,
    SyntheticSpec,
    TrainConfig,
    TrainResult,
    bias_variance,
    generate_dataset,
    pearson,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "InputError",
    "NumericalError",
    "TrainingDivergedError",
    "EmbeddingRecord",
    "LocalStats",
    "CategoryStats",
    "GlobalStats",
    "EmbeddingQueue",
    "EpochAccumulator",
    "compute_local_stats",
    "merge_stats",
    "epoch_finalize",
    "ShrinkageSpec",
    "InfoAmountTable",
    "shrink_covariance",
    "information_amount",
    "information_amount_from_embeddings",
    "information_amounts_from_stats",
    "InfoNormalization",
    "MarginMatrix",
    "CosineClassifier",
    "LossOutput",
    "LossBatch",
    "normalize_info",
    "build_margins",
    "igam_forward",
    "igam_backward",
    "normface_forward",
    "ce_forward",
    "igam_batch",
    "normface_batch",
    "ce_batch",
    "PlanInput",
    "PlanResult",
    "storage_ratio",
    "optimal_queue_length",
    "memory_report",
    "SyntheticSpec",
    "TrainConfig",
    "Dataset",
    "EpochReport",
    "TrainResult",
    "generate_dataset",
    "train",
    "pearson",
    "bias_variance",
    "__version__",
]
