from .plan import STRATEGIES, ExperimentPlan, PlanError, PretrainSettings, load_plan, results_root
from .runner import (DependencyError, build_domains, cell_name, evaluate_model, fit, load_model,
                     pretrain, run_cell, run_grid, select_checkpoint)
from .table import IncompleteGridError, ResultTable, aggregate, load_runs, render_report, trend_check

__all__ = [
    "STRATEGIES", "DependencyError", "ExperimentPlan", "IncompleteGridError", "PlanError",
    "PretrainSettings", "ResultTable", "aggregate", "build_domains", "cell_name", "evaluate_model",
    "fit", "load_model", "load_plan", "load_runs", "pretrain", "render_report", "results_root",
    "run_cell", "run_grid", "select_checkpoint", "trend_check",
]
