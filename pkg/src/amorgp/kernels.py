"""Stationary covariance functions over tape tensors.

Matérn 3/2 is the default covariance throughout; a squared-exponential
(RBF) kernel is provided as the alternative.  Lengthscales act by
rescaling inputs before the distance computation, which gives automatic
relevance determination when a vector lengthscale is used.  Both kernels
accept rank-2 inputs (n, d) and rank-3 batched inputs (b, n, d), the
latter producing one covariance block per batch element.
"""

from __future__ import annotations

import numpy as np

from . import tape
from .tape import Tensor

SQRT3 = float(np.sqrt(3.0))


def _row_sq_norms(x: Tensor) -> Tensor:
    return tape.reduce_sum(x * x, axis=x.ndim - 1)


def _sqdist(xa: Tensor, xb: Tensor) -> Tensor:
    """Pairwise squared distances between row sets (shared leading batch)."""
    ra = _row_sq_norms(xa)
    rb = _row_sq_norms(xb)
    cross = tape.matmul(xa, tape.transpose(xb))
    if xa.ndim == 2:
        n, m = xa.shape[0], xb.shape[0]
        col = tape.matmul(tape.reshape(ra, (n, 1)), Tensor(np.ones((1, m))))
        row = tape.matmul(Tensor(np.ones((n, 1))), tape.reshape(rb, (1, m)))
    else:
        b, n, m = xa.shape[0], xa.shape[1], xb.shape[1]
        col = tape.matmul(tape.reshape(ra, (b, n, 1)), Tensor(np.ones((b, 1, m))))
        row = tape.matmul(Tensor(np.ones((b, n, 1))), tape.reshape(rb, (b, 1, m)))
    return col + row - 2.0 * cross


class StationaryKernel:
    """Shared machinery: lengthscale rescaling and hyperparameter access.

    ``log_lengthscale`` is a scalar for an isotropic kernel or a vector
    of per-dimension values for ARD; ``log_amplitude`` is the log signal
    standard deviation.
    """

    def __init__(self, log_lengthscale, log_amplitude):
        self.log_lengthscale = (
            log_lengthscale
            if isinstance(log_lengthscale, Tensor)
            else Tensor(log_lengthscale, requires_grad=True, name="kernel.log_lengthscale")
        )
        self.log_amplitude = (
            log_amplitude
            if isinstance(log_amplitude, Tensor)
            else Tensor(log_amplitude, requires_grad=True, name="kernel.log_amplitude")
        )
        if self.log_lengthscale.ndim > 1:
            raise tape.ShapeError(f"lengthscale must be scalar or vector, got {self.log_lengthscale.shape}")

    def parameters(self) -> dict[str, Tensor]:
        return {
            "kernel.log_lengthscale": self.log_lengthscale,
            "kernel.log_amplitude": self.log_amplitude,
        }

    def _rescale(self, x: Tensor) -> Tensor:
        inv = tape.exp(-self.log_lengthscale)
        if self.log_lengthscale.ndim == 0:
            return x * inv
        if x.shape[-1] != self.log_lengthscale.shape[0]:
            raise tape.ShapeError(
                f"input dim {x.shape[-1]} does not match ARD lengthscale dim {self.log_lengthscale.shape[0]}"
            )
        return tape.colscale(x, inv)

    def _amp2(self) -> Tensor:
        return tape.exp(2.0 * self.log_amplitude)

    def __call__(self, xa: Tensor, xb: Tensor | None = None) -> Tensor:
        xa = tape.as_tensor(xa)
        xb = xa if xb is None else tape.as_tensor(xb)
        if xa.ndim != xb.ndim or xa.ndim not in (2, 3):
            raise tape.ShapeError(f"kernel inputs of shapes {xa.shape} and {xb.shape}")
        if xa.shape[-1] != xb.shape[-1]:
            raise tape.ShapeError(f"kernel inputs disagree on dim: {xa.shape} vs {xb.shape}")
        d2 = _sqdist(self._rescale(xa), self._rescale(xb))
        return self._from_sqdist(d2)

    def diag(self, x: Tensor) -> Tensor:
        """Diagonal of the self-covariance: amplitude^2 at every input."""
        x = tape.as_tensor(x)
        ones = Tensor(np.ones(x.shape[:-1]))
        return ones * self._amp2()

    def _from_sqdist(self, d2: Tensor) -> Tensor:
        raise NotImplementedError


class Matern32(StationaryKernel):
    """Matérn covariance with smoothness 3/2: amp^2 (1 + √3 r) exp(-√3 r)."""

    name = "matern32"

    def _from_sqdist(self, d2: Tensor) -> Tensor:
        # clamp before the sqrt keeps the gradient finite at zero distance
        r = tape.sqrt(tape.clamp_min(d2, 1e-12))
        s = SQRT3 * r
        return self._amp2() * ((1.0 + s) * tape.exp(-s))


class RBF(StationaryKernel):
    """Squared-exponential covariance: amp^2 exp(-r^2 / 2)."""

    name = "rbf"

    def _from_sqdist(self, d2: Tensor) -> Tensor:
        return self._amp2() * tape.exp(-0.5 * tape.clamp_min(d2, 0.0))


KERNELS = {Matern32.name: Matern32, RBF.name: RBF}


def median_log_lengthscale(x: np.ndarray, ard: bool, max_points: int = 500) -> np.ndarray:
    """Median-distance heuristic on (standardized) inputs; deterministic.

    ARD uses the per-dimension median absolute difference over pairs,
    isotropic the median Euclidean distance.  A strided subsample bounds
    the pair count; medians are floored to avoid log of zero on discrete
    columns.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n > max_points:
        stride = int(np.ceil(n / max_points))
        x = x[::stride]
    diff = x[:, None, :] - x[None, :, :]
    iu = np.triu_indices(x.shape[0], k=1)
    if ard:
        med = np.median(np.abs(diff[iu]), axis=0)
        med = np.maximum(med, 1e-3)
        return np.log(med)
    dist = np.sqrt(np.sum(diff[iu] ** 2, axis=-1))
    med = max(float(np.median(dist)), 1e-3)
    return np.asarray(np.log(med))


def build_kernel(kind: str, dim: int, ard: bool, x: np.ndarray | None = None) -> StationaryKernel:
    """Construct a kernel with heuristic lengthscales from the training inputs."""
    if kind not in KERNELS:
        raise ValueError(f"unknown kernel kind '{kind}' (have: {sorted(KERNELS)})")
    if x is not None and x.shape[0] >= 2:
        log_ls = median_log_lengthscale(x, ard=ard)
    else:
        log_ls = np.zeros(dim) if ard else np.asarray(0.0)
    if ard and np.ndim(log_ls) == 0:
        log_ls = np.full(dim, float(log_ls))
    return KERNELS[kind](
        Tensor(log_ls, requires_grad=True, name="kernel.log_lengthscale"),
        Tensor(0.0, requires_grad=True, name="kernel.log_amplitude"),
    )
