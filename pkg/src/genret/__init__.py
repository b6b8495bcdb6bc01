"""Generative ranking of region descriptions.

Rank candidate words for an image region by the sentence-level loss a
conditional text generator assigns to templated descriptions, next to a
contrastive embedding-distance baseline, with exact synthetic-world oracles,
cache/replay, a remote scoring protocol, per-class probability calibration,
and ranking metrics.
"""

from . import errors
from .backends import (
    CachedScoreBackend,
    Capabilities,
    LoopbackServer,
    OracleBackend,
    RemoteBackend,
    ScorerBackend,
    SentenceScoreSource,
    TokenDistribution,
    UniformBackend,
    read_score_cache,
    scored_to_records,
    write_score_cache,
)
from .calibration import (
    CalibrationTable,
    FitConfig,
    FitHistory,
    apply_calibration,
    bce_and_grads,
    calibrated_prob,
    fit,
    read_table,
    write_table,
)
from .core import (
    CANONICAL_TEMPLATE_SPECS,
    AnchorKind,
    Method,
    RankingInstance,
    ScoredInstance,
    Slot,
    Template,
    canonical_templates,
    format_template,
    instance_from_dict,
    instance_to_dict,
    normalize_word,
    parse_template,
    read_instances,
    render,
    stable_seed,
    tokenize,
    write_instances,
)
from .dataset import (
    BoxAnnotation,
    CooccurrenceStats,
    NegativePlan,
    SceneGraphRecord,
    build_instance,
    build_split,
    build_stats,
    parse_scene_graph,
    plan_instance,
    record_to_dict,
    select_negatives,
    write_scene_graph,
)
from .metrics import (
    ClassMeta,
    MetricReport,
    bucketize,
    compute_report,
    mean_average_precision,
    mean_balanced_accuracy,
    mean_rank,
    mean_recall_at_k,
    overall_f1_at_k,
    positive_ranks,
)
from .scoring import (
    batch_rank,
    contrastive_loss,
    generative_loss,
    rank_instance,
    ranking_order,
)
from .world import (
    CAPTION_TEMPLATE_SPECS,
    Entity,
    SyntheticScene,
    WorldSpec,
    caption_process,
    make_instances,
    random_world,
    read_scenes,
    read_world,
    sample_scenes,
    scenes_to_records,
    write_scenes,
    write_world,
)

__version__ = "0.1.0"

__all__ = [
    "AnchorKind",
    "BoxAnnotation",
    "CANONICAL_TEMPLATE_SPECS",
    "CAPTION_TEMPLATE_SPECS",
    "CachedScoreBackend",
    "CalibrationTable",
    "Capabilities",
    "ClassMeta",
    "CooccurrenceStats",
    "Entity",
    "FitConfig",
    "FitHistory",
    "LoopbackServer",
    "Method",
    "MetricReport",
    "NegativePlan",
    "OracleBackend",
    "RankingInstance",
    "RemoteBackend",
    "SceneGraphRecord",
    "ScoredInstance",
    "ScorerBackend",
    "SentenceScoreSource",
    "Slot",
    "SyntheticScene",
    "Template",
    "TokenDistribution",
    "UniformBackend",
    "WorldSpec",
    "apply_calibration",
    "batch_rank",
    "bce_and_grads",
    "bucketize",
    "build_instance",
    "build_split",
    "build_stats",
    "calibrated_prob",
    "canonical_templates",
    "caption_process",
    "compute_report",
    "contrastive_loss",
    "errors",
    "fit",
    "format_template",
    "generative_loss",
    "instance_from_dict",
    "instance_to_dict",
    "make_instances",
    "mean_average_precision",
    "mean_balanced_accuracy",
    "mean_rank",
    "mean_recall_at_k",
    "normalize_word",
    "overall_f1_at_k",
    "parse_scene_graph",
    "parse_template",
    "plan_instance",
    "positive_ranks",
    "rank_instance",
    "ranking_order",
    "read_instances",
    "read_scenes",
    "read_score_cache",
    "read_table",
    "read_world",
    "record_to_dict",
    "render",
    "sample_scenes",
    "scenes_to_records",
    "scored_to_records",
    "select_negatives",
    "stable_seed",
    "tokenize",
    "write_instances",
    "write_scene_graph",
    "write_scenes",
    "write_score_cache",
    "write_table",
    "write_world",
]
