"""Dense float64 tensors with tape-based reverse-mode differentiation.

Everything downstream (kernels, variational objectives, the amortization
network) is built from the primitives in this module.  An op executes
eagerly with numpy, checks its output for non-finite values, and appends
a backward closure to the innermost active ``Tape``.  Gradients are
obtained by walking the tape in reverse from a scalar output.

Broadcasting is deliberately restricted: elementwise binary ops accept
either two tensors of identical shape or a tensor and a scalar.  Anything
more implicit has to be spelled out with explicit expansion ops, which
keeps backward rules simple enough to audit.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit, log_ndtr

from . import smallmat


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested op."""


class NumericError(ArithmeticError):
    """An op produced a non-finite value or an irrecoverable factorization failure."""


class TapeError(RuntimeError):
    """Tape misuse, e.g. backward from a non-scalar or untaped output."""


_LOG_2PI = float(np.log(2.0 * np.pi))
_tid_counter = itertools.count()
_tape_stack: list["Tape"] = []


class Tensor:
    """A float64 ndarray plus identity for gradient bookkeeping.

    Tensors are immutable as far as ops are concerned; optimizers may
    overwrite ``value`` in place between tape lifetimes.
    """

    __slots__ = ("value", "requires_grad", "name", "tid")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.tid = next(_tid_counter)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.value)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar; every path funnels into the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Records ops so a scalar output can be differentiated.

    Use as a context manager; ops executed inside record themselves when
    any of their inputs is being traced.  Leaves with ``requires_grad``
    are watched automatically the first time they feed an op; other
    leaves can be watched explicitly.
    """

    def __init__(self):
        self._nodes: list[tuple[int, Callable[[np.ndarray], Iterable[tuple[int, np.ndarray]]]]] = []
        self._watched: dict[int, Tensor] = {}
        self._traced: set[int] = set()

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack.pop()
        assert popped is self
        return False

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            if t.tid not in self._watched:
                self._watched[t.tid] = t
                self._traced.add(t.tid)

    def _wants(self, inputs: Sequence[Tensor]) -> bool:
        for t in inputs:
            if t.tid in self._traced:
                return True
            if t.requires_grad:
                return True
        return False

    def _record(self, inputs: Sequence[Tensor], out: Tensor, backward) -> None:
        for t in inputs:
            if t.requires_grad and t.tid not in self._traced:
                self.watch(t)
        self._traced.add(out.tid)
        self._nodes.append((out.tid, backward))

    def backward(self, out: Tensor) -> dict[int, np.ndarray]:
        """Reverse sweep from scalar ``out``; returns {leaf tid: gradient}.

        Watched leaves that did not influence ``out`` get zero arrays.
        The sweep is pure: running it twice gives bitwise-identical maps.
        """
        if out.value.shape != ():
            raise TapeError(f"backward from non-scalar output of shape {out.shape}")
        if out.tid not in self._traced:
            raise TapeError("backward from a tensor that is not on this tape")
        partial: dict[int, np.ndarray] = {out.tid: np.ones((), dtype=np.float64)}
        for out_tid, bwd in reversed(self._nodes):
            g = partial.get(out_tid)
            if g is None:
                continue
            for tid, contrib in bwd(g):
                acc = partial.get(tid)
                partial[tid] = contrib if acc is None else acc + contrib
        grads: dict[int, np.ndarray] = {}
        for tid, leaf in self._watched.items():
            g = partial.get(tid)
            if g is None:
                g = np.zeros(leaf.value.shape, dtype=np.float64)
            else:
                g = np.asarray(g, dtype=np.float64)
                if g.shape != leaf.value.shape:
                    g = np.broadcast_to(g, leaf.value.shape).copy()
            grads[tid] = g
        return grads


def _active() -> Tape | None:
    return _tape_stack[-1] if _tape_stack else None


def _emit(op: str, inputs: Sequence[Tensor], value: np.ndarray, backward) -> Tensor:
    """Finalize an op: finite-check the result and record it if traced."""
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite values produced by op '{op}'")
    out = Tensor(value)
    tape = _active()
    if tape is not None and tape._wants(inputs):
        tape._record(inputs, out, backward)
    return out


def _check_same_or_scalar(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    raise ShapeError(f"op '{op}': shapes {a.shape} and {b.shape} are neither equal nor scalar-paired")


def _reduce_to(shape: tuple[int, ...], g: np.ndarray) -> np.ndarray:
    # collapse a broadcast gradient back onto a scalar operand
    if shape == g.shape:
        return g
    return np.sum(g, dtype=np.float64).reshape(shape)


# ---------------------------------------------------------------------------
# elementwise binary


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_or_scalar("add", a, b)
    with np.errstate(all="ignore"):
        v = a.value + b.value
    ash, bsh = a.shape, b.shape
    ta, tb = a.tid, b.tid

    def bwd(g):
        return [(ta, _reduce_to(ash, g)), (tb, _reduce_to(bsh, g))]

    return _emit("add", (a, b), v, bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_or_scalar("sub", a, b)
    with np.errstate(all="ignore"):
        v = a.value - b.value
    ash, bsh = a.shape, b.shape
    ta, tb = a.tid, b.tid

    def bwd(g):
        return [(ta, _reduce_to(ash, g)), (tb, _reduce_to(bsh, -g))]

    return _emit("sub", (a, b), v, bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_or_scalar("mul", a, b)
    with np.errstate(all="ignore"):
        v = a.value * b.value
    av, bv = a.value, b.value
    ash, bsh = a.shape, b.shape
    ta, tb = a.tid, b.tid

    def bwd(g):
        return [(ta, _reduce_to(ash, g * bv)), (tb, _reduce_to(bsh, g * av))]

    return _emit("mul", (a, b), v, bwd)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_or_scalar("div", a, b)
    with np.errstate(all="ignore"):
        v = a.value / b.value
    av, bv = a.value, b.value
    ash, bsh = a.shape, b.shape
    ta, tb = a.tid, b.tid

    def bwd(g):
        ga = g / bv
        gb = -g * av / (bv * bv)
        return [(ta, _reduce_to(ash, ga)), (tb, _reduce_to(bsh, gb))]

    return _emit("div", (a, b), v, bwd)


# ---------------------------------------------------------------------------
# elementwise unary


def neg(a) -> Tensor:
    a = as_tensor(a)
    ta = a.tid

    def bwd(g):
        return [(ta, -g)]

    return _emit("neg", (a,), -a.value, bwd)


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(all="ignore"):
        v = np.exp(a.value)
    ta = a.tid

    def bwd(g):
        return [(ta, g * v)]

    return _emit("exp", (a,), v, bwd)


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(all="ignore"):
        v = np.log(a.value)
    av = a.value
    ta = a.tid

    def bwd(g):
        return [(ta, g / av)]

    return _emit("log", (a,), v, bwd)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(all="ignore"):
        v = np.sqrt(a.value)
    ta = a.tid

    def bwd(g):
        return [(ta, g / (2.0 * v))]

    return _emit("sqrt", (a,), v, bwd)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    v = np.tanh(a.value)
    ta = a.tid

    def bwd(g):
        return [(ta, g * (1.0 - v * v))]

    return _emit("tanh", (a,), v, bwd)


def softplus(a) -> Tensor:
    """log(1 + exp(x)), computed without overflow."""
    a = as_tensor(a)
    v = np.logaddexp(0.0, a.value)
    av = a.value
    ta = a.tid

    def bwd(g):
        return [(ta, g * expit(av))]

    return _emit("softplus", (a,), v, bwd)


def logphi(a) -> Tensor:
    """log of the standard normal CDF, stable far into the left tail."""
    a = as_tensor(a)
    v = log_ndtr(a.value)
    av = a.value
    ta = a.tid

    def bwd(g):
        # d/dx log Phi(x) = phi(x) / Phi(x), evaluated in log space
        return [(ta, g * np.exp(-0.5 * av * av - 0.5 * _LOG_2PI - v))]

    return _emit("logphi", (a,), v, bwd)


def clamp_min(a, floor: float) -> Tensor:
    """Elementwise max(x, floor); gradient is zero on the clamped set."""
    a = as_tensor(a)
    floor = float(floor)
    v = np.maximum(a.value, floor)
    mask = a.value > floor
    ta = a.tid

    def bwd(g):
        return [(ta, g * mask)]

    return _emit("clamp_min", (a,), v, bwd)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    try:
        v = a.value.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"op 'reshape': cannot view {a.shape} as {shape}") from e
    in_shape = a.shape
    ta = a.tid

    def bwd(g):
        return [(ta, np.ascontiguousarray(g).reshape(in_shape))]

    return _emit("reshape", (a,), np.ascontiguousarray(v), bwd)


def transpose(a) -> Tensor:
    """Swap the last two axes (matrix transpose, batched when rank 3)."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise ShapeError(f"op 'transpose': rank-{a.ndim} input of shape {a.shape}")
    v = np.ascontiguousarray(np.swapaxes(a.value, -1, -2))
    ta = a.tid

    def bwd(g):
        return [(ta, np.swapaxes(g, -1, -2))]

    return _emit("transpose", (a,), v, bwd)


def getitem(a, key) -> Tensor:
    """Basic indexing (ints and slices); the backward pass scatter-adds."""
    a = as_tensor(a)
    v = a.value[key]
    if np.isscalar(v) or v.ndim == 0:
        v = np.asarray(v, dtype=np.float64)
    in_shape = a.shape
    ta = a.tid

    def bwd(g):
        full = np.zeros(in_shape, dtype=np.float64)
        np.add.at(full, key, g)
        return [(ta, full)]

    return _emit("getitem", (a,), np.ascontiguousarray(v), bwd)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("op 'concat': empty input list")
    try:
        v = np.concatenate([p.value for p in parts], axis=axis)
    except ValueError as e:
        raise ShapeError(f"op 'concat': shapes {[p.shape for p in parts]} along axis {axis}") from e
    sizes = [p.shape[axis] for p in parts]
    tids = [p.tid for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        out = []
        for tid, lo, hi in zip(tids, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(int(lo), int(hi))
            out.append((tid, np.ascontiguousarray(g[tuple(idx)])))
        return out

    return _emit("concat", parts, v, bwd)


def reduce_sum(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        v = np.sum(a.value, dtype=np.float64)
        in_shape = a.shape
        ta = a.tid

        def bwd(g):
            return [(ta, np.full(in_shape, float(g), dtype=np.float64))]

        return _emit("reduce_sum", (a,), np.asarray(v), bwd)
    axis = int(axis)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"op 'reduce_sum': axis {axis} out of range for shape {a.shape}")
    axis = axis % a.ndim
    v = np.sum(a.value, axis=axis, dtype=np.float64)
    in_shape = a.shape
    ta = a.tid

    def bwd(g):
        g_exp = np.expand_dims(g, axis)
        return [(ta, np.ascontiguousarray(np.broadcast_to(g_exp, in_shape)))]

    return _emit("reduce_sum", (a,), v, bwd)


def fill_tril(flat, m: int) -> Tensor:
    """Unpack packed lower-triangle values (row-major) into (m, m) matrices.

    Accepts (t,) -> (m, m) or (b, t) -> (b, m, m) with t = m (m + 1) / 2.
    """
    flat = as_tensor(flat)
    m = int(m)
    t = m * (m + 1) // 2
    rows, cols = np.tril_indices(m)
    if flat.ndim == 1:
        if flat.shape[0] != t:
            raise ShapeError(f"op 'fill_tril': got {flat.shape[0]} values, need {t} for m={m}")
        v = np.zeros((m, m), dtype=np.float64)
        v[rows, cols] = flat.value
        ta = flat.tid

        def bwd(g):
            return [(ta, np.ascontiguousarray(g[rows, cols]))]

        return _emit("fill_tril", (flat,), v, bwd)
    if flat.ndim == 2:
        if flat.shape[1] != t:
            raise ShapeError(f"op 'fill_tril': got {flat.shape[1]} values, need {t} for m={m}")
        b = flat.shape[0]
        v = np.zeros((b, m, m), dtype=np.float64)
        v[:, rows, cols] = flat.value
        ta = flat.tid

        def bwd(g):
            return [(ta, np.ascontiguousarray(g[:, rows, cols]))]

        return _emit("fill_tril", (flat,), v, bwd)
    raise ShapeError(f"op 'fill_tril': rank-{flat.ndim} input of shape {flat.shape}")


def diag_part(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim not in (2, 3) or a.shape[-1] != a.shape[-2]:
        raise ShapeError(f"op 'diag_part': input of shape {a.shape} is not square")
    v = np.ascontiguousarray(np.diagonal(a.value, axis1=-2, axis2=-1))
    in_shape = a.shape
    m = a.shape[-1]
    ta = a.tid

    def bwd(g):
        full = np.zeros(in_shape, dtype=np.float64)
        idx = np.arange(m)
        full[..., idx, idx] = g
        return [(ta, full)]

    return _emit("diag_part", (a,), v, bwd)


def diag_embed(d) -> Tensor:
    d = as_tensor(d)
    if d.ndim not in (1, 2):
        raise ShapeError(f"op 'diag_embed': rank-{d.ndim} input of shape {d.shape}")
    m = d.shape[-1]
    idx = np.arange(m)
    out_shape = d.shape + (m,)
    v = np.zeros(out_shape, dtype=np.float64)
    v[..., idx, idx] = d.value
    ta = d.tid

    def bwd(g):
        return [(ta, np.ascontiguousarray(g[..., idx, idx]))]

    return _emit("diag_embed", (d,), v, bwd)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"op 'matmul': inner dims of {a.shape} and {b.shape} disagree")
    elif a.ndim == b.ndim == 3:
        if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
            raise ShapeError(f"op 'matmul': batched shapes {a.shape} and {b.shape} disagree")
    else:
        raise ShapeError(f"op 'matmul': ranks {a.ndim} and {b.ndim} unsupported (want 2/2 or 3/3)")
    v = a.value @ b.value
    av, bv = a.value, b.value
    ta, tb = a.tid, b.tid

    def bwd(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return [(ta, ga), (tb, gb)]

    return _emit("matmul", (a, b), v, bwd)


def colscale(x, s) -> Tensor:
    """Scale the trailing feature axis of x by the vector s."""
    x, s = as_tensor(x), as_tensor(s)
    if s.ndim != 1 or x.ndim < 1 or x.shape[-1] != s.shape[0]:
        raise ShapeError(f"op 'colscale': shapes {x.shape} and {s.shape}")
    v = x.value * s.value
    xv, sv = x.value, s.value
    tx, ts = x.tid, s.tid
    lead = tuple(range(x.ndim - 1))

    def bwd(g):
        gx = g * sv
        gs = np.sum(g * xv, axis=lead, dtype=np.float64)
        return [(tx, gx), (ts, gs)]

    return _emit("colscale", (x, s), v, bwd)


def _tril_half_diag(m: np.ndarray) -> np.ndarray:
    out = np.tril(m)
    idx = np.arange(m.shape[-1])
    out[..., idx, idx] *= 0.5
    return out


def cholesky(a) -> Tensor:
    """Lower Cholesky factor; rank-3 inputs factor each batch element.

    Failure raises NumericError: jitter policy lives a level up, where
    candidate matrices are probed before being put on the tape.
    """
    a = as_tensor(a)
    if a.ndim not in (2, 3) or a.shape[-1] != a.shape[-2]:
        raise ShapeError(f"op 'cholesky': input of shape {a.shape} is not square")
    if a.ndim == 2:
        try:
            v = np.linalg.cholesky(a.value)
        except np.linalg.LinAlgError as e:
            raise NumericError("op 'cholesky': matrix is not positive definite") from e
    else:
        v, ok = smallmat.chol_batch(a.value)
        if not ok.all():
            bad = int(np.sum(~ok))
            raise NumericError(f"op 'cholesky': {bad} of {a.shape[0]} batch matrices not positive definite")
    ta = a.tid
    batched = a.ndim == 3

    def bwd(g):
        # L^{-T} tril_half(L^T g) L^{-1}, symmetrized
        mid = _tril_half_diag(np.swapaxes(v, -1, -2) @ g)
        if batched:
            w = smallmat.trisolve_batch(v, mid, trans=True)
            w = smallmat.trisolve_batch(v, np.swapaxes(w, -1, -2), trans=True)
        else:
            w = solve_triangular(v, mid, lower=True, trans="T", check_finite=False)
            w = solve_triangular(v, w.T, lower=True, trans="T", check_finite=False)
        ga = 0.5 * (w + np.swapaxes(w, -1, -2))
        return [(ta, ga)]

    return _emit("cholesky", (a,), v, bwd)


def tri_solve(l, b, trans: bool = False) -> Tensor:
    """Solve L x = b (or L^T x = b) with L lower triangular.

    Rank-2: L (m, m), b (m, k).  Rank-3: both batched with equal batch.
    """
    l, b = as_tensor(l), as_tensor(b)
    if l.ndim not in (2, 3) or l.shape[-1] != l.shape[-2]:
        raise ShapeError(f"op 'tri_solve': factor of shape {l.shape} is not square")
    if b.ndim != l.ndim:
        raise ShapeError(f"op 'tri_solve': factor rank {l.ndim} but rhs rank {b.ndim}")
    if l.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"op 'tri_solve': factor {l.shape} incompatible with rhs {b.shape}")
    batched = l.ndim == 3
    if batched:
        v = smallmat.trisolve_batch(l.value, b.value, trans=trans)
    else:
        v = solve_triangular(l.value, b.value, lower=True, trans="T" if trans else "N", check_finite=False)
    lv = l.value
    tl, tb = l.tid, b.tid

    def bwd(g):
        if batched:
            gb = smallmat.trisolve_batch(lv, g, trans=not trans)
        else:
            gb = solve_triangular(lv, g, lower=True, trans="N" if trans else "T", check_finite=False)
        if trans:
            gl = -np.tril(v @ np.swapaxes(gb, -1, -2))
        else:
            gl = -np.tril(gb @ np.swapaxes(v, -1, -2))
        return [(tl, gl), (tb, gb)]

    return _emit("tri_solve", (l, b), v, bwd)
