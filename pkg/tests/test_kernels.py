import os
import subprocess
import sys

import numpy as np
import pytest

from coniclpv import _kernels


def _case(rng, N=500, n=3, m=2):
    h = rng.uniform(1e-3, 2e-2, N)
    A = [rng.standard_normal((N, n, n)) - 2 * np.eye(n) for _ in range(3)]
    B = [rng.standard_normal((N, n, m)) for _ in range(3)]
    u = [rng.standard_normal((N, m)) for _ in range(3)]
    return h, *A, *B, *u, rng.standard_normal(n)


@pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")
@pytest.mark.parametrize("seed", range(3))
def test_numba_matches_python(seed):
    args = _case(np.random.default_rng(seed))
    Xn, en = _kernels.rk4_linear(*args, 1e9, use_numba=True)
    Xp, ep = _kernels.rk4_linear(*args, 1e9, use_numba=False)
    assert en == ep == -1
    assert np.allclose(Xn, Xp, rtol=1e-12, atol=1e-12)


@pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")
def test_escape_index_agrees():
    rng = np.random.default_rng(9)
    args = list(_case(rng, N=2000, n=2, m=1))
    for k in (1, 2, 3):
        args[k] = np.broadcast_to(np.array([[1.5, 0.0], [0.0, 0.5]]), args[k].shape).copy()
    _, en = _kernels.rk4_linear(*args, 1e3, use_numba=True)
    _, ep = _kernels.rk4_linear(*args, 1e3, use_numba=False)
    assert en == ep > 0


def test_env_flag_selects_fallback():
    code = "from coniclpv import _kernels; print(_kernels.USE_NUMBA)"
    env = dict(os.environ, CONICLPV_NO_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"
