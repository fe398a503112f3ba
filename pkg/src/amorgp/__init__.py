"""Amortized sparse Gaussian processes on a small float64 autodiff tape.

The package provides exact GP regression, a sparse variational GP with
one global set of inducing points, and an input-dependent sparse GP in
which a feed-forward network emits per-input inducing locations and
Gaussian posterior parameters.  A command line front end drives
training, prediction, evaluation and benchmarks.
"""

from .tape import Tape, Tensor

__all__ = ["Tape", "Tensor"]
__version__ = "0.1.0"
