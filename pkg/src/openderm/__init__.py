"""openderm: open-set decision engine for skin-lesion classifier outputs.

Turns per-model class-probability matrices into final open-set diagnoses:
ensemble aggregation, entropy-calibrated rejection of unknown-class samples,
metadata-prior re-ranking of low-confidence predictions, and the evaluation
metrics to score the result.
"""

from .ensemble import (
    MajorityVote,
    MemberPredictions,
    aggregate_average,
    aggregate_majority,
    aggregate_max_prob,
    select_best_members,
)
from .fusion import (
    ClassConfidence,
    FusionResult,
    FusionSummary,
    MetadataPriors,
    MetadataRecord,
    fuse_batch,
    fuse_record,
)
from .metrics import (
    EvaluationReport,
    accuracy,
    balanced_accuracy,
    class_weights,
    confusion_matrix,
    evaluate,
    macro_auc,
)
from .openset import (
    EntropyOutlierDetector,
    OutlierDecision,
    OutlierSummary,
    RejectionStage,
    cosine_similarity,
    entropy_bits,
    shannon_entropy,
)
from .taxonomy import (
    ClassTaxonomy,
    DEFAULT_TAXONOMY,
    ISIC2019_TRAIN_COUNTS,
    LabeledRecord,
    ProbabilityRecord,
    labeled_records_to_arrays,
    records_to_arrays,
    top_k,
    validate_probability,
)

__version__ = "0.1.0"

__all__ = [
    "ClassConfidence",
    "ClassTaxonomy",
    "DEFAULT_TAXONOMY",
    "EntropyOutlierDetector",
    "EvaluationReport",
    "FusionResult",
    "FusionSummary",
    "ISIC2019_TRAIN_COUNTS",
    "LabeledRecord",
    "MajorityVote",
    "MemberPredictions",
    "MetadataPriors",
    "MetadataRecord",
    "OutlierDecision",
    "OutlierSummary",
    "ProbabilityRecord",
    "RejectionStage",
    "accuracy",
    "aggregate_average",
    "aggregate_majority",
    "aggregate_max_prob",
    "balanced_accuracy",
    "class_weights",
    "confusion_matrix",
    "cosine_similarity",
    "entropy_bits",
    "evaluate",
    "fuse_batch",
    "fuse_record",
    "labeled_records_to_arrays",
    "macro_auc",
    "records_to_arrays",
    "select_best_members",
    "shannon_entropy",
    "top_k",
    "validate_probability",
]
