"""End-to-end inference: optimize the hyperparameters, explore the mode
neighborhood, assemble marginals.

Warm starts flow from the most recent accepted outer iterate only (never
from concurrent sibling evaluations), so the sequence of iterates, and
everything downstream, is identical for any thread budget.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InnerDivergence, NotPositiveDefinite
from .marginals import (
    MarginalResult,
    explore_grid,
    hyper_marginals,
    latent_marginals,
)
from .model import HyperParams, ModelSpec
from .objective import ObjectiveEvaluator
from .optimizer import (
    FDConfig,
    LineSearchConfig,
    OptimizeConfig,
    OptimizeResult,
    optimize,
)
from .runtime import SERIAL, ThreadBudget


@dataclass
class FitConfig:
    budget: ThreadBudget = SERIAL
    strategy: str = "eb"  # eb | grid
    fd: FDConfig = field(default_factory=FDConfig)
    line_search: LineSearchConfig = field(default_factory=LineSearchConfig)
    theta0: np.ndarray | None = None
    max_iterations: int = 200
    ordering: str = "nested-dissection"
    leaf_cutoff: int = 64

    def __post_init__(self):
        if self.strategy not in ("eb", "grid"):
            raise ConfigError("strategy", f"unknown strategy {self.strategy!r}")


@dataclass
class FitResult:
    theta_mode: HyperParams
    f_mode: float
    hessian: np.ndarray
    optimization: OptimizeResult
    marginals: MarginalResult
    evaluator: ObjectiveEvaluator
    n_fn_evals: int
    analyze_s: float
    total_s: float
    time_per_fn_s: float
    budget: ThreadBudget

    def summary(self) -> dict:
        return {
            "theta_mode": [float(v) for v in self.theta_mode.theta],
            "theta_names": list(self.theta_mode.names),
            "f_mode": float(self.f_mode),
            "status": self.optimization.status,
            "iterations": self.optimization.iterations,
            "n_fn_evals": int(self.n_fn_evals),
            "time_per_fn_s": float(self.time_per_fn_s),
            "analyze_s": float(self.analyze_s),
            "total_s": float(self.total_s),
            "budget": str(self.budget),
            "n_latent": int(self.evaluator.n),
            "n_obs": int(self.evaluator.spec.m),
            "n_integration_points": int(self.marginals.n_points),
        }


def fit(spec: ModelSpec, y: np.ndarray, cfg: FitConfig | None = None) -> FitResult:
    """Run the full pipeline on one model and dataset."""
    cfg = cfg or FitConfig()
    if spec.theta_dim < 1:
        raise ConfigError("model", "no hyperparameters to optimize")
    t_start = time.perf_counter()
    evaluator = ObjectiveEvaluator(
        spec, y, ordering=cfg.ordering, leaf_cutoff=cfg.leaf_cutoff
    )
    analyze_s = time.perf_counter() - t_start

    warm = {"mode": None}

    def objective(theta) -> float:
        # numerically infeasible points (a hyperparameter so extreme the
        # conditional precision cannot be factorized, or the inner loop
        # breaks down) count as infinitely bad rather than fatal: the line
        # search and grid exploration discard non-finite values.
        try:
            value, _ = evaluator.eval_objective(
                theta, warm_start=warm["mode"], budget=cfg.budget
            )
        except (NotPositiveDefinite, InnerDivergence):
            return float("inf")
        return value.f

    def on_accept(theta):
        # refresh the warm start from the accepted iterate; single threaded
        approx = evaluator.gaussian_approx(theta, warm_start=warm["mode"], budget=cfg.budget)
        warm["mode"] = approx.mode
        evaluator.cache_put(theta, approx)

    theta0 = (
        np.zeros(spec.theta_dim)
        if cfg.theta0 is None
        else np.asarray(cfg.theta0, dtype=np.float64)
    )
    opt_cfg = OptimizeConfig(
        fd=cfg.fd,
        line_search=cfg.line_search,
        budget=cfg.budget,
        max_iterations=cfg.max_iterations,
    )
    result = optimize(objective, theta0, opt_cfg, on_accept=on_accept)

    if evaluator.cache_get(result.theta) is None:
        approx = evaluator.gaussian_approx(result.theta, warm_start=warm["mode"], budget=cfg.budget)
        warm["mode"] = approx.mode
        evaluator.cache_put(result.theta, approx)

    points = explore_grid(
        objective,
        result.theta,
        result.hessian,
        strategy=cfg.strategy,
        budget=cfg.budget,
        f_star=result.f,
    )
    marg = latent_marginals(evaluator, points, cfg.budget)
    marg.hyper = hyper_marginals(points, result.theta, result.hessian, spec.theta_names)

    total_s = time.perf_counter() - t_start
    n_fn = evaluator.stats()["n_evaluations"]
    per_fn = (total_s - analyze_s) / max(n_fn, 1)
    return FitResult(
        theta_mode=spec.hyper_params(result.theta),
        f_mode=result.f,
        hessian=result.hessian,
        optimization=result,
        marginals=marg,
        evaluator=evaluator,
        n_fn_evals=n_fn,
        analyze_s=analyze_s,
        total_s=total_s,
        time_per_fn_s=per_fn,
        budget=cfg.budget,
    )
