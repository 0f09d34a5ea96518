"""Post-hoc audit of expert-coalition structure in MoE routing traces."""

__version__ = "0.1.0"

from .anchors import AnchorMatrix, anchor_matrix
from .committee import (
    CandidateStats,
    Committee,
    candidate_set,
    committee_stats,
    extract_committees,
    influence_ratio,
    pareto_front,
    rank_experts,
)
from .metrics import (
    JaccardReport,
    LorenzCurve,
    gini,
    jaccard,
    jaccard_report,
    lorenz,
    topk_set,
)
from .profiles import TaskProfileSet, compute_profiles, global_contribution
from .specificity import (
    SpecificityScores,
    compute_specificity,
    cosine_distance,
    filter_domains,
    silhouette_scores,
)
from .sweep import SweepResult, run_sweep
from .synth import SynthSpec, TokenPlant, generate, generate_disjoint
from .trace import (
    RoutingTrace,
    SampleRecord,
    TokenRecord,
    TraceFormatError,
    TraceHeader,
    TraceReadError,
    TraceValidationError,
    ValidationReport,
    load_trace,
    read_trace,
    save_trace,
    validate_trace,
    write_trace,
)

__all__ = [
    "AnchorMatrix",
    "CandidateStats",
    "Committee",
    "JaccardReport",
    "LorenzCurve",
    "RoutingTrace",
    "SampleRecord",
    "SpecificityScores",
    "SweepResult",
    "SynthSpec",
    "TaskProfileSet",
    "TokenPlant",
    "TokenRecord",
    "TraceFormatError",
    "TraceHeader",
    "TraceReadError",
    "TraceValidationError",
    "ValidationReport",
    "anchor_matrix",
    "candidate_set",
    "committee_stats",
    "compute_profiles",
    "compute_specificity",
    "cosine_distance",
    "extract_committees",
    "filter_domains",
    "generate",
    "generate_disjoint",
    "gini",
    "global_contribution",
    "influence_ratio",
    "jaccard",
    "jaccard_report",
    "load_trace",
    "lorenz",
    "pareto_front",
    "rank_experts",
    "read_trace",
    "run_sweep",
    "save_trace",
    "silhouette_scores",
    "topk_set",
    "validate_trace",
    "write_trace",
]
