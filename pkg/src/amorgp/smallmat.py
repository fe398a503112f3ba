"""Batched small-matrix kernels with a compiled core and a numpy fallback.

The hot loops of the input-dependent model factor and solve one tiny
system per batch element, so these two routines dominate training time.
A Cython implementation is used when the extension built; otherwise the
numpy path below is selected.  Set AMORGP_SMALLMAT=c or =py to force a
backend (c raises if the extension is unavailable), anything else means
auto.
"""

from __future__ import annotations

import os

import numpy as np

_native = None
_mode = os.environ.get("AMORGP_SMALLMAT", "auto").lower()
if _mode in ("auto", "c"):
    try:
        from . import _smallmat_c as _native
    except ImportError:
        if _mode == "c":
            raise ImportError(
                "AMORGP_SMALLMAT=c but the compiled extension amorgp._smallmat_c is not built"
            )
        _native = None

BACKEND = "c" if _native is not None else "py"


def chol_batch_np(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lower Cholesky factor of each (m, m) slice of a (b, m, m) stack.

    Returns (l, ok) where ok[i] is False for slices that are not positive
    definite; those rows of l are zero.  The all-ok case stays vectorized.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = a.shape[0]
    try:
        return np.linalg.cholesky(a), np.ones(b, dtype=bool)
    except np.linalg.LinAlgError:
        pass
    l = np.zeros_like(a)
    ok = np.zeros(b, dtype=bool)
    for i in range(b):
        try:
            l[i] = np.linalg.cholesky(a[i])
            ok[i] = True
        except np.linalg.LinAlgError:
            pass
    return l, ok


def trisolve_batch_np(l: np.ndarray, rhs: np.ndarray, trans: bool = False) -> np.ndarray:
    """Solve L x = rhs (or L^T x = rhs) for every batch element."""
    mats = np.swapaxes(l, -1, -2) if trans else l
    return np.linalg.solve(mats, rhs)


if _native is not None:

    def chol_batch(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a = np.ascontiguousarray(a, dtype=np.float64)
        l, ok = _native.chol_batch(a)
        return l, ok.astype(bool)

    def trisolve_batch(l: np.ndarray, rhs: np.ndarray, trans: bool = False) -> np.ndarray:
        l = np.ascontiguousarray(l, dtype=np.float64)
        rhs = np.ascontiguousarray(rhs, dtype=np.float64)
        return _native.trisolve_batch(l, rhs, 1 if trans else 0)

else:
    chol_batch = chol_batch_np
    trisolve_batch = trisolve_batch_np
