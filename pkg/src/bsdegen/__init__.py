"""Generative modeling with forward-backward stochastic dynamics.

A forward mean-reverting diffusion carries Gaussian noise through time; a
learned backward process, driven by the same Brownian increments, steps to
a terminal value that is trained to match a target image distribution
under an unbiased kernel MMD loss. Everything runs on a small reverse-mode
tape over float64 numpy arrays, with numba-compiled hot kernels and a pure
numpy fallback selected by the BSDEGEN_BACKEND env var.
"""

from .backends import active_backend
from .sde import ForwardSpec, TimeGrid
from .bsde import GenModel, GeneratorSpec, generate_batch, new_model
from .mmd import KernelSpec, mmd2_value
from .trainer import TrainConfig, Trainer, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ForwardSpec",
    "GenModel",
    "GeneratorSpec",
    "KernelSpec",
    "TimeGrid",
    "TrainConfig",
    "Trainer",
    "active_backend",
    "evaluate",
    "generate_batch",
    "mmd2_value",
    "new_model",
    "train",
    "__version__",
]
