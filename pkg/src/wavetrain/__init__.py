"""Wavelet-regularized adversarial training at desk scale.

A small numpy-backed stack: reverse-mode autodiff, a two-channel wavelet
engine with averaged-subband pooling, compact wide residual models, white-
and black-box attacks, an adversarial training loop, and evaluation
harnesses (robust accuracy, Fourier heat maps, Grad-CAM, wavelet-decay
checks).
"""

import os

# single-sequence determinism is the contract, and one BLAS thread is faster
# than two on small desk-scale GEMMs; honored only if the user has not chosen
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

from .autodiff import SGDMomentum, Tensor, no_grad
from .wavelet import SUPPORTED_BASES, FilterBank, SubbandSet, filter_bank

__all__ = [
    "FilterBank",
    "SGDMomentum",
    "SUPPORTED_BASES",
    "SubbandSet",
    "Tensor",
    "filter_bank",
    "no_grad",
]

__version__ = "0.1.0"
