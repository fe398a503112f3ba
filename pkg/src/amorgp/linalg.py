"""Positive-definite factorization with jitter escalation, and Gaussian KL.

Every covariance that reaches a Cholesky goes through ``chol_jitter`` so
the escalation policy is uniform: jitter is scaled to the mean diagonal,
starts at a base of 1e-6, doubles on failure and gives up at 1e-2.  The
first attempt already includes the base jitter, which keeps gradients
identical between runs that would and would not have needed a retry.

KL divergences between full-covariance Gaussians are evaluated through
triangular solves of the prior factor; no matrix inverses are formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import smallmat, tape
from .tape import Tensor


class NotPositiveDefiniteError(tape.NumericError):
    """Factorization failed at the jitter cap; carries the last jitter tried."""

    def __init__(self, message: str, jitter: float):
        super().__init__(message)
        self.jitter = jitter


@dataclass
class CholFactor:
    """Lower Cholesky factor of a jittered matrix plus the jitter used."""

    lower: Tensor
    jitter: float


def _factor_schedule(base_rel: float, cap_rel: float):
    """Relative jitter levels: base, then doubling up to the cap."""
    f = base_rel
    while f <= cap_rel:
        yield f
        f = 2.0 * f if f > 0.0 else 1e-6


def chol_jitter(a: Tensor, base_rel: float = 1e-6, cap_rel: float = 1e-2) -> CholFactor:
    """Factor a symmetric matrix, escalating diagonal jitter until it succeeds.

    The escalation itself probes plain values off the tape; the winning
    level is then applied on the tape as factor * mean(diag), so the
    jitter's dependence on the matrix is differentiated along with the
    rest of the graph and only one Cholesky node is recorded.
    """
    a = tape.as_tensor(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise tape.ShapeError(f"chol_jitter: input of shape {a.shape} is not square")
    m = a.shape[0]
    diag_mean = float(np.mean(np.diagonal(a.value)))
    scale = diag_mean if diag_mean > 0.0 else 1.0
    eye = np.eye(m)
    factor = jit = None
    for cand in _factor_schedule(base_rel, cap_rel):
        factor, jit = cand, cand * scale
        try:
            np.linalg.cholesky(a.value + jit * eye)
            break
        except np.linalg.LinAlgError:
            continue
    else:
        raise NotPositiveDefiniteError(
            f"matrix of shape {a.shape} not positive definite at jitter {jit:.3e} "
            f"(cap {cap_rel:.1e} relative to mean diagonal {diag_mean:.3e})",
            jitter=jit if jit is not None else 0.0,
        )
    if factor == 0.0:
        lower = tape.cholesky(a)
    elif diag_mean > 0.0:
        jit_t = (factor / m) * tape.reduce_sum(tape.diag_part(a))
        lower = tape.cholesky(a + tape.diag_embed(Tensor(np.ones(m)) * jit_t))
    else:
        lower = tape.cholesky(a + Tensor(jit * eye))
    return CholFactor(lower=lower, jitter=jit)


def chol_jitter_batch(a: Tensor, base_rel: float = 1e-6, cap_rel: float = 1e-2) -> tuple[Tensor, np.ndarray]:
    """Batched ``chol_jitter``: per-element escalation, one on-tape factorization.

    Returns the (b, m, m) lower factors and the per-element jitter array.
    """
    a = tape.as_tensor(a)
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise tape.ShapeError(f"chol_jitter_batch: input of shape {a.shape} is not batched square")
    b, m = a.shape[0], a.shape[1]
    diag_mean = np.mean(np.diagonal(a.value, axis1=1, axis2=2), axis=1)
    scale = np.where(diag_mean > 0.0, diag_mean, 1.0)
    factors = np.full(b, base_rel)
    eye = np.eye(m)
    pending = np.ones(b, dtype=bool)
    while True:
        trial = a.value[pending] + (factors[pending] * scale[pending])[:, None, None] * eye
        _, ok = smallmat.chol_batch(trial)
        idx = np.flatnonzero(pending)
        pending[idx[ok]] = False
        if not pending.any():
            break
        nxt = np.where(factors[pending] > 0.0, 2.0 * factors[pending], 1e-6)
        if np.any(nxt > cap_rel):
            worst = int(idx[~ok][0])
            raise NotPositiveDefiniteError(
                f"batch element {worst} not positive definite at jitter "
                f"{factors[worst] * scale[worst]:.3e} (cap {cap_rel:.1e} relative to "
                f"mean diagonal {diag_mean[worst]:.3e})",
                jitter=float(factors[worst] * scale[worst]),
            )
        factors[pending] = nxt
    jit = factors * scale
    if np.all(diag_mean > 0.0):
        mean_diag_t = (1.0 / m) * tape.reduce_sum(tape.diag_part(a), axis=1)
        jit_col = tape.reshape(mean_diag_t * Tensor(factors), (b, 1))
        shift = tape.matmul(jit_col, Tensor(np.ones((1, m))))
        lower = tape.cholesky(a + tape.diag_embed(shift))
    else:
        lower = tape.cholesky(a + tape.diag_embed(Tensor(jit[:, None] * np.ones((1, m)))))
    return lower, jit


def logdet_from_chol(lower: Tensor) -> Tensor:
    """log determinant of the factored matrix: 2 sum log diag(L)."""
    return 2.0 * tape.reduce_sum(tape.log(tape.diag_part(lower)))


def _check_scale_tril(scale_tril: Tensor) -> None:
    d = np.diagonal(scale_tril.value, axis1=-2, axis2=-1)
    if np.any(d <= 0.0):
        raise ValueError("gauss_kl: scale_tril must have strictly positive diagonal")


def gauss_kl(mean: Tensor, scale_tril: Tensor, prior_lower: Tensor) -> Tensor:
    """KL(N(mean, S) || N(0, K)) with S, K given by their lower factors.

    Evaluated as 0.5 (tr(K^{-1} S) + mean^T K^{-1} mean - m + log|K| - log|S|)
    using solves against the prior factor only.
    """
    mean = tape.as_tensor(mean)
    scale_tril = tape.as_tensor(scale_tril)
    prior_lower = tape.as_tensor(prior_lower)
    m = mean.shape[0]
    if mean.ndim != 1 or scale_tril.shape != (m, m) or prior_lower.shape != (m, m):
        raise tape.ShapeError(
            f"gauss_kl: mean {mean.shape}, scale_tril {scale_tril.shape}, prior {prior_lower.shape}"
        )
    _check_scale_tril(scale_tril)
    alpha = tape.tri_solve(prior_lower, tape.reshape(mean, (m, 1)))
    mahal = tape.reduce_sum(alpha * alpha)
    w = tape.tri_solve(prior_lower, scale_tril)
    trace = tape.reduce_sum(w * w)
    logdets = logdet_from_chol(prior_lower) - logdet_from_chol(scale_tril)
    return 0.5 * (trace + mahal - float(m) + logdets)


def gauss_kl_batch(mean: Tensor, scale_tril: Tensor, prior_lower: Tensor) -> Tensor:
    """Per-element KL for batched Gaussians; returns a (b,) tensor."""
    mean = tape.as_tensor(mean)
    scale_tril = tape.as_tensor(scale_tril)
    prior_lower = tape.as_tensor(prior_lower)
    if mean.ndim != 2:
        raise tape.ShapeError(f"gauss_kl_batch: mean of shape {mean.shape} is not batched")
    b, m = mean.shape
    if scale_tril.shape != (b, m, m) or prior_lower.shape != (b, m, m):
        raise tape.ShapeError(
            f"gauss_kl_batch: mean {mean.shape}, scale_tril {scale_tril.shape}, prior {prior_lower.shape}"
        )
    _check_scale_tril(scale_tril)
    alpha = tape.tri_solve(prior_lower, tape.reshape(mean, (b, m, 1)))
    mahal = tape.reduce_sum(tape.reduce_sum(alpha * alpha, axis=2), axis=1)
    w = tape.tri_solve(prior_lower, scale_tril)
    trace = tape.reduce_sum(tape.reduce_sum(w * w, axis=2), axis=1)
    ld_p = 2.0 * tape.reduce_sum(tape.log(tape.diag_part(prior_lower)), axis=1)
    ld_q = 2.0 * tape.reduce_sum(tape.log(tape.diag_part(scale_tril)), axis=1)
    return 0.5 * (trace + mahal - float(m) + ld_p - ld_q)
