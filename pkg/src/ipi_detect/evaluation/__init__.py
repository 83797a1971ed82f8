from .ablations import ABLATIONS, AblationTable, run_ablation
from .baselines import BASELINES, run_baseline
from .embedding import embedding_analysis, pairwise_stats
from .folds import FoldSpec, make_folds
from .metrics import MetricsReport, compute_metrics, metrics_from_counts, summarize
from .pipeline import FoldContext, FoldResult, PipelineConfig, WindowCache, build_context, prepare_fold, pretrain_fold, run_pipeline
from .runner import evaluate_folds, summary_tables

__all__ = [
    "ABLATIONS",
    "AblationTable",
    "run_ablation",
    "BASELINES",
    "run_baseline",
    "embedding_analysis",
    "pairwise_stats",
    "FoldSpec",
    "make_folds",
    "MetricsReport",
    "compute_metrics",
    "metrics_from_counts",
    "summarize",
    "FoldContext",
    "FoldResult",
    "PipelineConfig",
    "WindowCache",
    "build_context",
    "prepare_fold",
    "pretrain_fold",
    "run_pipeline",
    "evaluate_folds",
    "summary_tables",
]
