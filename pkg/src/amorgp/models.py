"""Gaussian process models: exact regression, sparse variational, input-dependent.

All three expose the same training surface: ``parameters()`` returning
named leaf tensors and ``objective(x, y, n_total)`` returning a scalar
to ascend (log marginal likelihood for the exact model, an evidence
lower bound for the sparse ones).  Prediction returns latent marginal
moments; observation-level quantities are obtained by pushing those
through the likelihood.

The sparse variational model keeps one global set of inducing points.
The input-dependent model instead asks an amortization network for a
separate small inducing set and Gaussian posterior per data point; its
bound averages the per-point KL terms while the data term is scaled up
to the full dataset size, and its predictions use the state emitted at
each query point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import linalg, tape
from .kernels import StationaryKernel
from .nets import AmortizationNet, pack_scale_tril, unpack_scale_tril
from .tape import Tensor

log = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class PredictiveDistribution:
    """Latent marginal moments at a set of query points."""

    mean: np.ndarray
    var: np.ndarray


def _finalize_variance(var: np.ndarray) -> np.ndarray:
    worst = float(var.min()) if var.size else 0.0
    if worst < -1e-10:
        log.warning("clamping %d negative predictive variances (min %.3e)", int((var < 0).sum()), worst)
    return np.maximum(var, 0.0)


def _marginals_global(
    kdiag: Tensor, kzx: Tensor, prior_lower: Tensor, qmean: Tensor, qscale: Tensor
) -> tuple[Tensor, Tensor]:
    """Marginal moments of the sparse posterior with one shared state.

    mean = Kxz K^{-1} m and var = k** - k^T K^{-1} k + k^T K^{-1} S K^{-1} k,
    all through solves against the prior factor.
    """
    m, t = kzx.shape
    a = tape.tri_solve(prior_lower, kzx)
    b = tape.tri_solve(prior_lower, a, trans=True)
    mean = tape.reshape(tape.matmul(tape.transpose(b), tape.reshape(qmean, (m, 1))), (t,))
    c = tape.matmul(tape.transpose(qscale), b)
    var = kdiag - tape.reduce_sum(a * a, axis=0) + tape.reduce_sum(c * c, axis=0)
    return mean, tape.clamp_min(var, 0.0)


def _marginals_per_input(
    kdiag: Tensor, kzx: Tensor, prior_lower: Tensor, qmean: Tensor, qscale: Tensor
) -> tuple[Tensor, Tensor]:
    """Batched marginals: element i uses its own state and sees only x_i."""
    n, m = qmean.shape
    a = tape.tri_solve(prior_lower, kzx)
    b = tape.tri_solve(prior_lower, a, trans=True)
    mean = tape.reshape(tape.matmul(tape.transpose(b), tape.reshape(qmean, (n, m, 1))), (n,))
    c = tape.matmul(tape.transpose(qscale), b)

    def sqnorm(t3):
        return tape.reduce_sum(tape.reduce_sum(t3 * t3, axis=2), axis=1)

    var = kdiag - sqnorm(a) + sqnorm(c)
    return mean, tape.clamp_min(var, 0.0)


# ---------------------------------------------------------------------------
# exact GP


def exact_gp_objective(
    x: Tensor, y: np.ndarray, kernel: StationaryKernel, likelihood, base_rel: float = 1e-6, cap_rel: float = 1e-2
) -> Tensor:
    """Log marginal likelihood of a Gaussian-noise GP on the given data."""
    n = x.shape[0]
    knn = kernel(x)
    noisy = knn + tape.diag_embed(Tensor(np.ones(n)) * likelihood.noise_variance())
    fac = linalg.chol_jitter(noisy, base_rel, cap_rel)
    alpha = tape.tri_solve(fac.lower, Tensor(np.asarray(y, dtype=np.float64)[:, None]))
    quad = tape.reduce_sum(alpha * alpha)
    return -0.5 * quad - tape.reduce_sum(tape.log(tape.diag_part(fac.lower))) - 0.5 * n * LOG_2PI


def exact_gp_predict(
    x: np.ndarray,
    y: np.ndarray,
    kernel: StationaryKernel,
    likelihood,
    x_star: np.ndarray,
    base_rel: float = 1e-6,
    cap_rel: float = 1e-2,
) -> PredictiveDistribution:
    """Posterior latent moments at x_star; an empty training set gives the prior."""
    xs_t = Tensor(np.asarray(x_star, dtype=np.float64))
    kdiag = kernel.diag(xs_t)
    if len(y) == 0:
        return PredictiveDistribution(np.zeros(len(x_star)), _finalize_variance(kdiag.value.copy()))
    x_t = Tensor(np.asarray(x, dtype=np.float64))
    n = x_t.shape[0]
    noisy = kernel(x_t) + tape.diag_embed(Tensor(np.ones(n)) * likelihood.noise_variance())
    fac = linalg.chol_jitter(noisy, base_rel, cap_rel)
    kxs = kernel(x_t, xs_t)
    v = tape.tri_solve(fac.lower, kxs)
    w = tape.tri_solve(fac.lower, Tensor(np.asarray(y, dtype=np.float64)[:, None]))
    mean = tape.matmul(tape.transpose(v), w)
    var = kdiag - tape.reduce_sum(v * v, axis=0)
    return PredictiveDistribution(mean.value[:, 0].copy(), _finalize_variance(var.value.copy()))


class ExactGPModel:
    """Exact GP regression; the objective ignores batching and uses the stored set."""

    kind = "exact"

    def __init__(self, kernel: StationaryKernel, likelihood, x: np.ndarray, y: np.ndarray,
                 base_rel: float = 1e-6, cap_rel: float = 1e-2):
        self.kernel = kernel
        self.likelihood = likelihood
        self.x = np.asarray(x, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        self.base_rel = base_rel
        self.cap_rel = cap_rel

    def parameters(self) -> dict[str, Tensor]:
        return {**self.kernel.parameters(), **self.likelihood.parameters()}

    def objective(self, x: Tensor, y: np.ndarray, n_total: int) -> Tensor:
        # the log marginal likelihood has no mini-batch form, so the
        # stored training set is used regardless of the batch passed in
        return exact_gp_objective(
            Tensor(self.x), self.y, self.kernel, self.likelihood, self.base_rel, self.cap_rel
        )

    def predict_latent(self, x_star: np.ndarray) -> PredictiveDistribution:
        return exact_gp_predict(
            self.x, self.y, self.kernel, self.likelihood, x_star, self.base_rel, self.cap_rel
        )


# ---------------------------------------------------------------------------
# sparse variational GP with one global inducing set


def vsgp_elbo(
    x: Tensor,
    y: np.ndarray,
    n_total: int,
    z: Tensor,
    qmean: Tensor,
    qscale: Tensor,
    kernel: StationaryKernel,
    likelihood,
    base_rel: float = 1e-6,
    cap_rel: float = 1e-2,
) -> Tensor:
    """Evidence lower bound (n_total / n) sum E[log p(y_i | f_i)] - KL(q(u) || p(u))."""
    n = x.shape[0]
    fac = linalg.chol_jitter(kernel(z), base_rel, cap_rel)
    kzx = kernel(z, x)
    mean, var = _marginals_global(kernel.diag(x), kzx, fac.lower, qmean, qscale)
    ell = tape.reduce_sum(likelihood.expected_loglik(mean, var, y))
    kl = linalg.gauss_kl(qmean, qscale, fac.lower)
    return (float(n_total) / float(n)) * ell - kl


class VSGPModel:
    kind = "vsgp"

    def __init__(self, kernel, likelihood, z: Tensor, qmean: Tensor, qscale_flat: Tensor,
                 base_rel: float = 1e-6, cap_rel: float = 1e-2):
        self.kernel = kernel
        self.likelihood = likelihood
        self.z = z
        self.qmean = qmean
        self.qscale_flat = qscale_flat
        self.base_rel = base_rel
        self.cap_rel = cap_rel

    @property
    def num_inducing(self) -> int:
        return self.z.shape[0]

    def scale_tril(self) -> Tensor:
        return unpack_scale_tril(self.qscale_flat, self.num_inducing)

    def parameters(self) -> dict[str, Tensor]:
        return {
            "vsgp.z": self.z,
            "vsgp.qmean": self.qmean,
            "vsgp.qscale": self.qscale_flat,
            **self.kernel.parameters(),
            **self.likelihood.parameters(),
        }

    def objective(self, x: Tensor, y: np.ndarray, n_total: int) -> Tensor:
        return vsgp_elbo(
            x, y, n_total, self.z, self.qmean, self.scale_tril(),
            self.kernel, self.likelihood, self.base_rel, self.cap_rel,
        )

    def predict_latent(self, x_star: np.ndarray) -> PredictiveDistribution:
        xs_t = Tensor(np.asarray(x_star, dtype=np.float64))
        fac = linalg.chol_jitter(self.kernel(self.z), self.base_rel, self.cap_rel)
        kzx = self.kernel(self.z, xs_t)
        mean, var = _marginals_global(
            self.kernel.diag(xs_t), kzx, fac.lower, self.qmean, self.scale_tril()
        )
        return PredictiveDistribution(mean.value.copy(), _finalize_variance(var.value.copy()))


# ---------------------------------------------------------------------------
# input-dependent sparse GP


def idsgp_elbo(
    x: Tensor,
    y: np.ndarray,
    n_total: int,
    amort: AmortizationNet,
    kernel: StationaryKernel,
    likelihood,
    base_rel: float = 1e-6,
    cap_rel: float = 1e-2,
) -> Tensor:
    """Bound with per-input states: (n_total / n) sum_i E_i - (1 / n) sum_i KL_i.

    The KL of each element is taken against the prior over its own
    inducing values, so the penalty is an average over the batch rather
    than a single global term.
    """
    n, d = x.shape
    z, qmean, qscale = amort.states(x)
    lower, _ = linalg.chol_jitter_batch(kernel(z), base_rel, cap_rel)
    kzx = kernel(z, tape.reshape(x, (n, 1, d)))
    mean, var = _marginals_per_input(kernel.diag(x), kzx, lower, qmean, qscale)
    ell = tape.reduce_sum(likelihood.expected_loglik(mean, var, y))
    kl = tape.reduce_sum(linalg.gauss_kl_batch(qmean, qscale, lower))
    return (float(n_total) / float(n)) * ell - kl / float(n)


class IDSGPModel:
    kind = "idsgp"

    def __init__(self, kernel, likelihood, amort: AmortizationNet,
                 base_rel: float = 1e-6, cap_rel: float = 1e-2, predict_chunk: int = 8192):
        self.kernel = kernel
        self.likelihood = likelihood
        self.amort = amort
        self.base_rel = base_rel
        self.cap_rel = cap_rel
        self.predict_chunk = int(predict_chunk)

    @property
    def num_inducing(self) -> int:
        return self.amort.num_inducing

    def parameters(self) -> dict[str, Tensor]:
        return {
            **self.amort.parameters(),
            **self.kernel.parameters(),
            **self.likelihood.parameters(),
        }

    def objective(self, x: Tensor, y: np.ndarray, n_total: int) -> Tensor:
        return idsgp_elbo(
            x, y, n_total, self.amort, self.kernel, self.likelihood, self.base_rel, self.cap_rel
        )

    def _predict_chunk(self, x_star: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        t, d = x_star.shape
        xs_t = Tensor(x_star)
        z, qmean, qscale = self.amort.states(xs_t)
        lower, _ = linalg.chol_jitter_batch(self.kernel(z), self.base_rel, self.cap_rel)
        kzx = self.kernel(z, tape.reshape(xs_t, (t, 1, d)))
        mean, var = _marginals_per_input(self.kernel.diag(xs_t), kzx, lower, qmean, qscale)
        return mean.value.copy(), var.value.copy()

    def predict_latent(self, x_star: np.ndarray) -> PredictiveDistribution:
        """Each query point is scored under the state emitted for it."""
        x_star = np.asarray(x_star, dtype=np.float64)
        means, variances = [], []
        for lo in range(0, len(x_star), self.predict_chunk):
            m, v = self._predict_chunk(x_star[lo : lo + self.predict_chunk])
            means.append(m)
            variances.append(v)
        return PredictiveDistribution(np.concatenate(means), _finalize_variance(np.concatenate(variances)))


# ---------------------------------------------------------------------------
# factories


def _init_inducing(x_train: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """m training inputs plus a little noise; resamples if m exceeds n."""
    n, d = x_train.shape
    idx = rng.choice(n, size=m, replace=m > n)
    return x_train[idx] + 0.01 * rng.standard_normal((m, d))


def _prior_factor(kernel, z0: np.ndarray, base_rel: float, cap_rel: float) -> np.ndarray:
    fac = linalg.chol_jitter(kernel(Tensor(z0)), base_rel, cap_rel)
    return fac.lower.value


def build_vsgp(
    kernel, likelihood, x_train: np.ndarray, num_inducing: int, rng: np.random.Generator,
    base_rel: float = 1e-6, cap_rel: float = 1e-2,
) -> VSGPModel:
    """Inducing points from the data, posterior initialized at the prior."""
    z0 = _init_inducing(x_train, num_inducing, rng)
    lower0 = _prior_factor(kernel, z0, base_rel, cap_rel)
    return VSGPModel(
        kernel,
        likelihood,
        z=Tensor(z0, requires_grad=True, name="vsgp.z"),
        qmean=Tensor(np.zeros(num_inducing), requires_grad=True, name="vsgp.qmean"),
        qscale_flat=Tensor(pack_scale_tril(lower0), requires_grad=True, name="vsgp.qscale"),
        base_rel=base_rel,
        cap_rel=cap_rel,
    )


def build_idsgp(
    kernel, likelihood, x_train: np.ndarray, num_inducing: int, hidden: list[int],
    rng: np.random.Generator, base_rel: float = 1e-6, cap_rel: float = 1e-2,
    predict_chunk: int = 8192,
) -> IDSGPModel:
    """Network with a zeroed final layer pointed at one prior-matching state."""
    d = x_train.shape[1]
    amort = AmortizationNet.build(d, num_inducing, hidden, rng)
    z0 = _init_inducing(x_train, num_inducing, rng)
    lower0 = _prior_factor(kernel, z0, base_rel, cap_rel)
    amort.set_constant_state(z0, np.zeros(num_inducing), lower0)
    return IDSGPModel(kernel, likelihood, amort, base_rel, cap_rel, predict_chunk)
