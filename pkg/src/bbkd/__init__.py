"""Brownian bridge diffusion translation with teacher/student self-training.

Numeric core: a small reverse-mode autodiff engine over float64 numpy
arrays (with compiled convolution kernels when the extension is built), a
pinned-endpoint bridge diffusion process, and a residual conv denoiser.
Data side: synthetic phantoms degraded through genuine sparse-view
tomography, plus MSE/SSIM/PSNR evaluation.
"""

__version__ = "0.1.0"

from .bridge import BridgeSchedule, make_schedule
from .denoiser import DenoiserConfig
from .kernels import BACKEND, HAVE_EXTENSION
from .phantom import DegradationConfig

__all__ = [
    "BACKEND",
    "BridgeSchedule",
    "DegradationConfig",
    "DenoiserConfig",
    "HAVE_EXTENSION",
    "__version__",
    "make_schedule",
]
