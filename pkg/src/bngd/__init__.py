"""Batch-normalized gradient descent on ordinary least squares."""
from .analysis import (
    OmegaEstimate,
    ScalingTransform,
    SweepGrid,
    beta0,
    beta_bar_mc,
    eps_hat_curve,
    ode_predict,
    omega_measured,
    sweep,
    verify_scaling,
)
from .dynamics import RunConfig, StepDiagnostics, Trajectory, bngd_step, effective_lr, gd_step, residual_e, run
from .model import (
    DomainError,
    ProblemInstance,
    SpectrumSpec,
    grad_bn,
    hessian_bn,
    loss_bn,
    loss_gd,
    make_instance,
    saddle_hessian_eigs,
)
from .spectral import (
    ReducedSpectrum,
    SpectralError,
    SpectralSummary,
    SymMatrix,
    build_h_star,
    eigen_sym,
    h_norm,
    pseudo_spectral_radius,
    spectral_radius_shift,
)

__version__ = "0.1.0"
