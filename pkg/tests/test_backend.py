"""Compiled small-matrix backend: availability, parity, env selection."""

import os
import subprocess
import sys

import numpy as np
import pytest

from amorgp import smallmat


def random_spd_stack(b, m, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((b, m, m))
    return a @ np.swapaxes(a, -1, -2) + 0.5 * np.eye(m)


needs_native = pytest.mark.skipif(
    smallmat.BACKEND != "c", reason="compiled extension not built"
)


def test_backend_constant_is_reported():
    assert smallmat.BACKEND in ("c", "py")


@needs_native
def test_cholesky_parity_with_numpy_fallback():
    for b, m, seed in [(1, 1, 0), (4, 3, 1), (16, 8, 2), (64, 2, 3)]:
        a = random_spd_stack(b, m, seed)
        l_c, ok_c = smallmat.chol_batch(a)
        l_np, ok_np = smallmat.chol_batch_np(a)
        assert np.array_equal(ok_c, ok_np)
        assert np.max(np.abs(l_c - l_np)) < 1e-13


@needs_native
def test_cholesky_failure_flags_match():
    a = random_spd_stack(5, 3, 4)
    a[2] = -np.eye(3)  # one clearly indefinite slice
    l_c, ok_c = smallmat.chol_batch(a)
    _, ok_np = smallmat.chol_batch_np(a)
    assert list(ok_c) == list(ok_np) == [True, True, False, True, True]
    assert np.all(l_c[2] == 0.0)


@needs_native
@pytest.mark.parametrize("trans", [False, True])
def test_triangular_solve_parity(trans):
    rng = np.random.default_rng(7)
    for b, m, k in [(3, 4, 1), (10, 6, 2), (2, 1, 3)]:
        l, ok = smallmat.chol_batch(random_spd_stack(b, m, 100 + m))
        assert ok.all()
        rhs = rng.standard_normal((b, m, k))
        x_c = smallmat.trisolve_batch(l, rhs, trans=trans)
        x_np = smallmat.trisolve_batch_np(l, rhs, trans=trans)
        assert np.max(np.abs(x_c - x_np)) < 1e-12


@needs_native
def test_solve_actually_inverts():
    l, ok = smallmat.chol_batch(random_spd_stack(6, 5, 9))
    rhs = np.random.default_rng(1).standard_normal((6, 5, 2))
    x = smallmat.trisolve_batch(l, rhs)
    assert np.max(np.abs(l @ x - rhs)) < 1e-12
    xt = smallmat.trisolve_batch(l, rhs, trans=True)
    assert np.max(np.abs(np.swapaxes(l, -1, -2) @ xt - rhs)) < 1e-12


def _backend_in_subprocess(env_value):
    env = dict(os.environ)
    env["AMORGP_SMALLMAT"] = env_value
    out = subprocess.run(
        [sys.executable, "-c", "from amorgp import smallmat; print(smallmat.BACKEND)"],
        capture_output=True,
        text=True,
        env=env,
    )
    return out.returncode, out.stdout.strip(), out.stderr


def test_env_var_forces_python_fallback():
    code, backend, _ = _backend_in_subprocess("py")
    assert code == 0 and backend == "py"


@needs_native
def test_env_var_forces_compiled_backend():
    code, backend, _ = _backend_in_subprocess("c")
    assert code == 0 and backend == "c"


def test_models_agree_across_backends():
    # the same tiny training objective, evaluated under each backend
    script = (
        "import numpy as np\n"
        "from amorgp.data import make_toy, split\n"
        "from amorgp.experiment import build_dataset, build_model\n"
        "from amorgp.config import resolve\n"
        "from amorgp.tape import Tensor\n"
        "cfg = resolve(overrides=['data.n=30', 'model.num_inducing=3', 'model.net_width=6'])\n"
        "tr, te = build_dataset(cfg)\n"
        "model = build_model(cfg, tr)\n"
        "xs, ys = tr.standardized_x(), tr.standardized_y()\n"
        "print(repr(model.objective(Tensor(xs), ys, len(ys)).item()))\n"
    )
    results = {}
    for mode in ("py", "auto"):
        env = dict(os.environ)
        env["AMORGP_SMALLMAT"] = mode
        out = subprocess.run(
            [sys.executable, "-c", script], capture_output=True, text=True, env=env
        )
        assert out.returncode == 0, out.stderr
        results[mode] = float(out.stdout.strip())
    assert results["py"] == pytest.approx(results["auto"], abs=1e-9)
