"""
waveblur

Sparse wavelet-domain approximations of spatially varying blur operators,
with the windowed-convolution baseline and TV deblurring to compare them.
"""

from .blur_kernel import KernelField, apply_dense, make_field
from .bounds_patterns import (
    DecayBoundParams,
    NeighborhoodSet,
    expand_pattern,
    greedy_neighborhood,
    verify_decay,
)
from .config import ExperimentConfig
from .deblur import DegradationSpec, SolverParams, degrade, tv_deblur
from .errors import WaveblurError
from .experiments import ExperimentHandler, ReportWriterHandler, run_experiment
from .metrics import psnr, spectral_norm, theta_spectral_error, x_to_2_error
from .sparsification import greedy_weighted, make_sigma, wei_rule
from .theta_builder import (
    SparseTheta,
    ThetaMatrix,
    apply_sparse,
    build_sparse_theta,
    build_theta,
    threshold_abs,
)
from .wavelet import WaveletBasis, dwt, idwt, make_daubechies_filter
from .wc_baseline import make_layout, wc_apply

__version__ = "0.1.0"
__all__ = [
    "WaveletBasis",
    "dwt",
    "idwt",
    "make_daubechies_filter",
    "KernelField",
    "make_field",
    "apply_dense",
    "ThetaMatrix",
    "SparseTheta",
    "build_theta",
    "build_sparse_theta",
    "threshold_abs",
    "apply_sparse",
    "make_sigma",
    "greedy_weighted",
    "wei_rule",
    "DecayBoundParams",
    "NeighborhoodSet",
    "greedy_neighborhood",
    "expand_pattern",
    "verify_decay",
    "make_layout",
    "wc_apply",
    "spectral_norm",
    "theta_spectral_error",
    "x_to_2_error",
    "psnr",
    "DegradationSpec",
    "SolverParams",
    "degrade",
    "tv_deblur",
    "ExperimentConfig",
    "ExperimentHandler",
    "ReportWriterHandler",
    "run_experiment",
    "WaveblurError",
]
