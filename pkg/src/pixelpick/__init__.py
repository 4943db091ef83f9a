"""Pool-based active learning for semantic segmentation from sparse pixel
labels: a small from-scratch segmentation model, uncertainty-driven pixel
acquisition with a diversity heuristic, simulated and human oracles, and a
reproducible experiment engine.
"""

from .core import (
    IGNORE_LABEL,
    AnnotationDatabase,
    DuplicatePixelError,
    GroundTruthMask,
    Image,
    LabelSource,
    LabelledPixel,
    PixelRef,
    ProbabilityMap,
    candidate_pool,
    db_insert,
    load_annotations,
    save_annotations,
    softmax_normalize,
)
from .model import (
    Model,
    ModelConfig,
    TrainConfig,
    augment,
    forward,
    init_model,
    load_model,
    loss_gradient,
    predict,
    save_model,
    sparse_ce_loss,
    train_round,
)
from .acquisition import (
    AcquisitionConfig,
    Heuristic,
    ShortfallError,
    Strategy,
    UncertaintyMap,
    class_diversity,
    score_entropy,
    score_least_confidence,
    score_margin,
    select_random,
    select_variant_a,
    select_variant_b,
)
from .oracle import OracleConfig, OracleKind, PartialSessionError, human_collect, human_request, reveal, reveal_noisy
from .datasets import Dataset, SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .engine import (
    LoopConfig,
    RoundReport,
    compute_miou,
    distribute_budget,
    run_active_learning,
    run_experiment,
    study_depth,
    study_diversity_ratio,
    study_noise,
    study_round_batch,
    write_report_csv,
)

__version__ = "0.1.0"
