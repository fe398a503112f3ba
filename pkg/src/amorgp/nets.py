"""Feed-forward networks that emit per-input variational states.

A plain tanh network maps each input to a flat output vector which is
then unpacked into inducing locations, a mean vector and a lower
triangular scale factor.  The unpacking applies a softplus plus a small
floor to the diagonal so every emitted factor is a valid Cholesky
factor regardless of the raw network output.
"""

from __future__ import annotations

import numpy as np

from . import tape
from .tape import Tensor

DIAG_FLOOR = 1e-6


def softplus_np(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def softplus_inv_np(y) -> np.ndarray:
    """Inverse of log(1 + exp(x)) for positive y."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0.0):
        raise ValueError("softplus inverse needs positive inputs")
    return np.log(np.expm1(y))


def unpack_scale_tril(flat: Tensor, m: int) -> Tensor:
    """Packed lower-triangle values -> factor with softplus-floored diagonal.

    Works on (t,) or (b, t) inputs with t = m (m + 1) / 2.
    """
    raw = tape.fill_tril(flat, m)
    d = tape.diag_part(raw)
    return raw - tape.diag_embed(d) + tape.diag_embed(tape.softplus(d) + DIAG_FLOOR)


def pack_scale_tril(lower: np.ndarray) -> np.ndarray:
    """Inverse of ``unpack_scale_tril`` on a concrete factor (numpy only)."""
    lower = np.asarray(lower, dtype=np.float64)
    m = lower.shape[0]
    packed = lower.copy()
    idx = np.arange(m)
    packed[idx, idx] = softplus_inv_np(lower[idx, idx] - DIAG_FLOOR)
    rows, cols = np.tril_indices(m)
    return packed[rows, cols]


class DenseNet:
    """tanh hidden layers with a linear read-out, over tape tensors."""

    def __init__(self, weights: list[Tensor], biases: list[Tensor]):
        self.weights = weights
        self.biases = biases

    @classmethod
    def build(cls, sizes: list[int], rng: np.random.Generator, zero_final: bool = False) -> "DenseNet":
        """Glorot-uniform hidden layers; the final layer can start at zero
        so the initial output is exactly its bias."""
        weights, biases = [], []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            if last and zero_final:
                w = np.zeros((fan_in, fan_out))
            else:
                bound = np.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-bound, bound, (fan_in, fan_out))
            weights.append(Tensor(w, requires_grad=True, name=f"net.w{i}"))
            biases.append(Tensor(np.zeros(fan_out), requires_grad=True, name=f"net.b{i}"))
        return cls(weights, biases)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.weights[0].shape[0]:
            raise tape.ShapeError(
                f"net input of shape {x.shape}, first layer expects dim {self.weights[0].shape[0]}"
            )
        n = x.shape[0]
        ones = Tensor(np.ones((n, 1)))
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = tape.matmul(h, w) + tape.matmul(ones, tape.reshape(b, (1, b.shape[0])))
            if i < len(self.weights) - 1:
                h = tape.tanh(h)
        return h

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"net.w{i}"] = w
            out[f"net.b{i}"] = b
        return out


class AmortizationNet:
    """Wraps a DenseNet whose output parameterizes one variational state per input.

    The flat output of width m d + m + m (m + 1) / 2 splits into inducing
    locations (m, d), a mean (m,) and a packed scale factor.
    """

    def __init__(self, net: DenseNet, num_inducing: int, input_dim: int):
        self.net = net
        self.num_inducing = int(num_inducing)
        self.input_dim = int(input_dim)
        want = self.output_width(self.num_inducing, self.input_dim)
        got = net.weights[-1].shape[1]
        if got != want:
            raise tape.ShapeError(f"net emits {got} values, state needs {want}")

    @staticmethod
    def output_width(m: int, d: int) -> int:
        return m * d + m + m * (m + 1) // 2

    @classmethod
    def build(
        cls,
        input_dim: int,
        num_inducing: int,
        hidden: list[int],
        rng: np.random.Generator,
    ) -> "AmortizationNet":
        sizes = [input_dim, *hidden, cls.output_width(num_inducing, input_dim)]
        net = DenseNet.build(sizes, rng, zero_final=True)
        return cls(net, num_inducing, input_dim)

    def states(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Per-input states: locations (n, m, d), means (n, m), factors (n, m, m)."""
        m, d = self.num_inducing, self.input_dim
        out = self.net.forward(x)
        n = out.shape[0]
        z = tape.reshape(out[:, : m * d], (n, m, d))
        mean = out[:, m * d : m * d + m]
        scale = unpack_scale_tril(out[:, m * d + m :], m)
        return z, mean, scale

    def set_constant_state(self, z0: np.ndarray, mean0: np.ndarray, lower0: np.ndarray) -> None:
        """Point the zeroed final layer at one fixed state for every input.

        Used at initialization to make the emitted posterior equal the
        prior: z0 with mean zero and the prior Cholesky factor.
        """
        m, d = self.num_inducing, self.input_dim
        if z0.shape != (m, d) or mean0.shape != (m,) or lower0.shape != (m, m):
            raise tape.ShapeError(
                f"constant state shapes {z0.shape}, {mean0.shape}, {lower0.shape} for m={m}, d={d}"
            )
        bias = self.net.biases[-1]
        packed = np.concatenate([z0.reshape(-1), mean0, pack_scale_tril(lower0)])
        bias.value = packed.astype(np.float64)
        self.net.weights[-1].value = np.zeros_like(self.net.weights[-1].value)

    def parameters(self) -> dict[str, Tensor]:
        return self.net.parameters()
