"""Bayesian optimization with piecewise-linear kernel MIQP acquisitions."""

from miqpbo.benchmarks import (
    BenchmarkFn,
    NelderMeadConfig,
    constraint_checker,
    get_benchmark,
    list_benchmarks,
    nelder_mead,
    penalized_objective,
)
from miqpbo.bo import (
    BoConfig,
    BoTrace,
    IterationRecord,
    Problem,
    additive_run,
    beta_schedule,
    bo_step,
    latin_hypercube,
    lcb,
    load_trace,
    polish,
    run_bo,
    save_trace,
    theoretical_beta,
    warm_start,
)
from miqpbo.gp import (
    Box,
    Dataset,
    KernelParams,
    MaternGP,
    build_gp,
    fit_hyperparameters,
    log_marginal_likelihood,
    matern32,
    matern32_curvature,
    posterior,
    standardize,
)
from miqpbo.model import (
    LinearConstraint,
    MiqpModel,
    QuadConstraint,
    build_full_model,
    build_sub_model,
    evaluate_candidate,
    export_lp_text,
    parse_lp_text,
)
from miqpbo.pwl import (
    BreakpointSet,
    PwlKernel,
    approx_posterior,
    build_breakpoints,
    build_pwl,
    eval_pwl,
    max_error,
)
from miqpbo.solver import Node, SolveResult, SolverConfig, Solution, solve

__all__ = [
    "BenchmarkFn",
    "BoConfig",
    "BoTrace",
    "Box",
    "BreakpointSet",
    "Dataset",
    "IterationRecord",
    "KernelParams",
    "LinearConstraint",
    "MaternGP",
    "MiqpModel",
    "NelderMeadConfig",
    "Node",
    "Problem",
    "PwlKernel",
    "QuadConstraint",
    "SolveResult",
    "SolverConfig",
    "Solution",
    "additive_run",
    "approx_posterior",
    "beta_schedule",
    "bo_step",
    "build_breakpoints",
    "build_full_model",
    "build_gp",
    "build_pwl",
    "build_sub_model",
    "constraint_checker",
    "eval_pwl",
    "evaluate_candidate",
    "export_lp_text",
    "fit_hyperparameters",
    "get_benchmark",
    "latin_hypercube",
    "lcb",
    "list_benchmarks",
    "load_trace",
    "log_marginal_likelihood",
    "matern32",
    "matern32_curvature",
    "max_error",
    "nelder_mead",
    "parse_lp_text",
    "penalized_objective",
    "polish",
    "posterior",
    "run_bo",
    "save_trace",
    "solve",
    "standardize",
    "theoretical_beta",
    "warm_start",
]

__version__ = "0.1.0"
