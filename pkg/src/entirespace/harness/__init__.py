"""Synthetic benchmark, training loop, metrics and the seeded experiment grids."""

from .bench import Benchmark, BenchmarkConfig, benchmark_from_log, make_benchmark, oracle_test_records, split_log
from .experiments import (
    DATASET_VARIANTS,
    MODEL_VARIANTS,
    AblationReport,
    AblationRow,
    CellResult,
    CellSpec,
    HarnessConfig,
    ScalingPoint,
    ScalingReport,
    ablation_run,
    mean_se,
    run_cell,
    run_cells,
    scaling_run,
)
from .metrics import GroupAUC, auc, gauc, gauc_report, hitrate_at_k, rank_requests
from .train import MetricReport, OptimConfig, TrainRun, batch_order, evaluate, evaluate_scores, search_rows, train

__all__ = [
    "DATASET_VARIANTS", "MODEL_VARIANTS", "AblationReport", "AblationRow", "Benchmark", "BenchmarkConfig",
    "CellResult", "CellSpec", "GroupAUC", "HarnessConfig", "MetricReport", "OptimConfig", "ScalingPoint",
    "ScalingReport", "TrainRun", "ablation_run", "auc", "batch_order", "benchmark_from_log", "evaluate",
    "evaluate_scores", "gauc", "gauc_report", "hitrate_at_k", "make_benchmark", "mean_se", "oracle_test_records",
    "rank_requests", "run_cell", "run_cells", "scaling_run", "search_rows", "split_log", "train",
]
