"""Observation models: Gaussian for regression, Bernoulli-probit for binary labels.

Each likelihood provides the expected log-likelihood under a Gaussian
over the latent function (the data term of the variational objective)
and the log predictive density obtained by pushing that Gaussian
through the observation model.  The Gaussian case is closed form; the
probit data term uses one-dimensional Gauss–Hermite quadrature while
its predictive density is the exact Gaussian-probit convolution.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

from . import tape
from .tape import Tensor

LOG_2PI = float(np.log(2.0 * np.pi))

# Plain Gauss-Hermite needs around 60 nodes to resolve the probit data
# term to 1e-6 absolute when the latent variance reaches 10; see the
# accuracy sweep in the test suite.  64 keeps a safety margin.
DEFAULT_QUAD_NODES = 64


def _check_var(var: Tensor) -> None:
    if np.any(var.value < 0.0):
        raise ValueError(f"negative latent variance (min {float(var.value.min()):.3e})")


class GaussianLikelihood:
    """Homoskedastic Gaussian noise with log-variance parameter."""

    kind = "gaussian"

    def __init__(self, log_noise: Tensor | float = np.log(0.1)):
        self.log_noise = (
            log_noise
            if isinstance(log_noise, Tensor)
            else Tensor(float(log_noise), requires_grad=True, name="likelihood.log_noise")
        )

    def parameters(self) -> dict[str, Tensor]:
        return {"likelihood.log_noise": self.log_noise}

    def noise_variance(self) -> Tensor:
        return tape.exp(self.log_noise)

    def expected_loglik(self, mean: Tensor, var: Tensor, y: np.ndarray) -> Tensor:
        """E_{f ~ N(mean, var)} log N(y; f, sigma^2), elementwise.

        Equals log N(y; mean, sigma^2) - var / (2 sigma^2).
        """
        _check_var(var)
        y_t = Tensor(np.asarray(y, dtype=np.float64))
        resid = y_t - mean
        quad = (resid * resid + var) / self.noise_variance()
        return -0.5 * (quad + self.log_noise + LOG_2PI)

    def predictive_loglik(self, mean: Tensor, var: Tensor, y: np.ndarray) -> Tensor:
        """log N(y; mean, var + sigma^2), elementwise."""
        _check_var(var)
        y_t = Tensor(np.asarray(y, dtype=np.float64))
        total = var + self.noise_variance()
        resid = y_t - mean
        return -0.5 * (resid * resid / total + tape.log(total) + LOG_2PI)

    def predictive_variance(self, var: np.ndarray) -> np.ndarray:
        """Latent variance plus noise, as plain arrays for reporting."""
        return np.asarray(var) + float(np.exp(self.log_noise.value))


class ProbitLikelihood:
    """Bernoulli likelihood with probit link; labels live in {-1, +1}."""

    kind = "probit"

    def __init__(self, quad_nodes: int = DEFAULT_QUAD_NODES):
        if quad_nodes < 1:
            raise ValueError(f"quad_nodes must be positive, got {quad_nodes}")
        self.quad_nodes = int(quad_nodes)
        t, w = np.polynomial.hermite.hermgauss(self.quad_nodes)
        self._nodes = t
        self._weights = w / np.sqrt(np.pi)

    def parameters(self) -> dict[str, Tensor]:
        return {}

    @staticmethod
    def _check_labels(y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if not np.all(np.isin(y, (-1.0, 1.0))):
            bad = y[~np.isin(y, (-1.0, 1.0))][0]
            raise ValueError(f"probit labels must be -1 or +1, got {bad!r}")
        return y

    def expected_loglik(self, mean: Tensor, var: Tensor, y: np.ndarray) -> Tensor:
        """Gauss-Hermite estimate of E_{f ~ N(mean, var)} log Phi(y f)."""
        _check_var(var)
        y = self._check_labels(y)
        n = mean.shape[0]
        q = self.quad_nodes
        spread = tape.sqrt(2.0 * tape.clamp_min(var, 1e-12))
        ones_row = Tensor(np.ones((1, q)))
        z = tape.matmul(tape.reshape(mean, (n, 1)), ones_row) + tape.matmul(
            tape.reshape(spread, (n, 1)), Tensor(self._nodes[None, :])
        )
        signed = tape.matmul(Tensor(y[:, None]), ones_row) * z
        lp = tape.logphi(signed)
        summed = tape.matmul(lp, Tensor(self._weights[:, None]))
        return tape.reshape(summed, (n,))

    def predictive_loglik(self, mean: Tensor, var: Tensor, y: np.ndarray) -> Tensor:
        """log p(y) = log Phi(y mean / sqrt(1 + var)), the exact convolution."""
        _check_var(var)
        y = self._check_labels(y)
        z = (Tensor(y) * mean) / tape.sqrt(1.0 + var)
        return tape.logphi(z)

    @staticmethod
    def class_probability(mean: np.ndarray, var: np.ndarray) -> np.ndarray:
        """P(y = +1) from latent moments, as plain arrays for reporting."""
        return ndtr(np.asarray(mean) / np.sqrt(1.0 + np.asarray(var)))


def build_likelihood(kind: str, quad_nodes: int = DEFAULT_QUAD_NODES):
    if kind == "gaussian":
        return GaussianLikelihood()
    if kind == "probit":
        return ProbitLikelihood(quad_nodes=quad_nodes)
    raise ValueError(f"unknown likelihood kind '{kind}' (have: gaussian, probit)")
