"""The numba kernels against the numpy reference, and the backend switch."""

import os
import subprocess
import sys

import mpmath
import numpy as np
import pytest

from attn_mirror import kernels
from attn_mirror._accel import HAVE_NUMBA
from attn_mirror.mirror import record_schedule

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")


def problem(seed, n=4, T=5, d=3, scale=1.0):
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, T, d))
    y = r.choice([-1.0, 1.0], n)
    Z = r.standard_normal((n, d))
    return X, y, Z, scale * r.standard_normal((d, d)), r.standard_normal(d)


@needs_numba
@pytest.mark.parametrize("code", [0, 1])
@pytest.mark.parametrize("scale", [0.1, 1.0, 20.0])
def test_objective_parity(code, scale):
    X, y, Z, W, v = problem(3, scale=scale)
    a = kernels.objective_grads_np(X, y, Z, W, v, code)
    b = kernels.objective_grads_nb(X, y, Z, W, v, code)
    for u, w in zip(a, b):
        assert np.allclose(u, w, rtol=1e-12, atol=1e-15)


@needs_numba
@pytest.mark.parametrize("code", [0, 1])
@pytest.mark.parametrize("scale", [0.1, 1.0, 30.0])
def test_log_objective_parity(code, scale):
    X, y, Z, W, v = problem(5, scale=scale)
    a = kernels.log_objective_grads_np(X, y, Z, W, v, code)
    b = kernels.log_objective_grads_nb(X, y, Z, W, v, code)
    for u, w in zip(a, b):
        assert np.allclose(u, w, rtol=1e-11, atol=1e-300)


@needs_numba
@pytest.mark.parametrize("joint", [False, True])
@pytest.mark.parametrize("safeguard", [False, True])
def test_train_loop_parity(joint, safeguard):
    X, y, Z, W, v = problem(9)
    sched = record_schedule(300, 7)
    args = (X, y, Z, 1e-3 * W, v, 1.75, 0.1, 0.05, sched, True, 1, joint, safeguard, 0.0)
    a = kernels.train_loop_np(*args)
    b = kernels.train_loop_nb(*args)
    for u, w in zip(a, b):
        assert np.allclose(u, w, rtol=1e-10, atol=1e-13)


def _mp_log_loss(m, code):
    m = mpmath.mpf(m)
    return -m if code == 0 else mpmath.log(mpmath.log1p(mpmath.exp(-m)))


def _mp_excess(X, y, Z, W, v, code):
    """log L - log L* in 60-digit arithmetic."""
    mpmath.mp.dps = 60
    n, T, _ = X.shape
    ll, llg = [], []
    for i in range(n):
        h = [mpmath.fsum(mpmath.mpf(X[i, t, r]) * mpmath.fsum(mpmath.mpf(W[r, c]) * Z[i, c] for c in range(W.shape[0]))
                         for r in range(W.shape[0])) for t in range(T)]
        e = [mpmath.exp(x - max(h)) for x in h]
        s = [x / mpmath.fsum(e) for x in e]
        g = [y[i] * mpmath.fsum(mpmath.mpf(X[i, t, r]) * v[r] for r in range(len(v))) for t in range(T)]
        ll.append(_mp_log_loss(mpmath.fsum(a * b for a, b in zip(s, g)), code))
        llg.append(_mp_log_loss(max(g), code))
    lse = lambda xs: mpmath.log(mpmath.fsum(mpmath.exp(x) for x in xs))
    return lse(ll) - lse(llg)


@pytest.mark.parametrize("code", [0, 1])
@pytest.mark.parametrize("scale", [0.5, 8.0, 40.0])
def test_excess_against_high_precision(code, scale):
    X, y, Z, W, v = problem(11, n=3, T=3, d=2, scale=scale)
    v = 10 * v  # large margins: log L itself is dominated by the head
    _, F, _, _ = kernels.log_objective_grads(X, y, Z, W, v, code)
    ref = float(_mp_excess(X, y, Z, W, v, code))
    assert F > 0
    assert abs(F - ref) <= 1e-9 * ref


def test_log_gradient_matches_loss_gradient():
    X, y, Z, W, v = problem(13)
    L, gW, gv, _, _ = kernels.objective_grads_np(X, y, Z, W, v, 1)
    logL, _, lgW, lgv = kernels.log_objective_grads_np(X, y, Z, W, v, 1)
    assert logL == pytest.approx(np.log(L), rel=1e-13)
    assert np.allclose(lgW, gW / L, rtol=1e-11)
    assert np.allclose(lgv, gv / L, rtol=1e-11)


def test_env_flag_selects_numpy():
    code = "from attn_mirror._accel import use_numba; print(use_numba())"
    env = dict(os.environ, ATTN_MIRROR_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"
    env.pop("ATTN_MIRROR_DISABLE_NUMBA")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == str(HAVE_NUMBA)


def test_numpy_backend_end_to_end():
    code = (
        "import numpy as np\n"
        "from attn_mirror import gen_synthetic, train_attention, TrainConfig, NearZero\n"
        "ds, v = gen_synthetic(6, 8, 10, 0)\n"
        "W, tr = train_attention(ds, v, 2.0, TrainConfig(max_iters=200, init=NearZero(1e-3, 0)))\n"
        "print(repr(float(tr.loss[-1])))\n"
    )
    runs = []
    for flag in ("1", "0"):
        env = dict(os.environ, ATTN_MIRROR_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        runs.append(float(out.stdout.strip()))
    assert runs[0] == pytest.approx(runs[1], rel=1e-12)
