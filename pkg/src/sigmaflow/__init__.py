"""Riemannian gradient flow for kernel metric learning on finite samples."""
from .data import (
    Moments,
    NoiseSignalSpec,
    SampleSet,
    estimate_moments,
    gen_noise_signal,
    load_csv,
    noise_monitors,
    save_csv,
    whiten,
)
from .flow import FlowConfig, FlowTrace, GradientOracle, run_flow, stationarity_residual
from .kernel import RadialKernel, gaussian, sobolev
from .regression import MetricPoint, RidgeSolution, gram_matrix, loss_at, solve_at, solve_ridge
from .variation import first_variation, metric_cotangent, pullback_gradient_u, riemannian_gradient

__version__ = "0.1.0"

__all__ = [
    "Moments", "NoiseSignalSpec", "SampleSet", "estimate_moments", "gen_noise_signal", "load_csv",
    "noise_monitors", "save_csv", "whiten",
    "FlowConfig", "FlowTrace", "GradientOracle", "run_flow", "stationarity_residual",
    "RadialKernel", "gaussian", "sobolev",
    "MetricPoint", "RidgeSolution", "gram_matrix", "loss_at", "solve_at", "solve_ridge",
    "first_variation", "metric_cotangent", "pullback_gradient_u", "riemannian_gradient",
    "__version__",
]
