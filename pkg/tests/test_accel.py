import os
import subprocess
import sys

import numpy as np
import pytest

from pillarmkl import _accel, fisher, kernels, svm


def test_default_uses_numba():
    if os.environ.get("PILLARMKL_NO_NUMBA", "0") not in ("", "0"):
        pytest.skip("fallback forced for this run")
    assert _accel.USE_NUMBA and svm._smo is svm._smo_numba


@pytest.mark.parametrize("symmetric", [True, False])
def test_sqdist_parity(symmetric):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((30, 7))
    z = x if symmetric else rng.standard_normal((20, 7))
    a = kernels._sqdist_numba(x, z, symmetric)
    b = kernels._sqdist_numpy(x, z, symmetric)
    assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, np.abs(a).max())


@pytest.mark.parametrize("seed", range(5))
def test_smo_parity_is_bit_exact(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((25, 3))
    K = kernels.kernel_gram(x, x, kernels.KernelParams("rbf", 0.5))
    y = np.where(rng.random(25) < 0.5, 1.0, -1.0)
    y[:2] = [1.0, -1.0]
    a = svm._smo_numba(K, y, 10.0, 1e-6, 10**6)
    b = svm._smo_numpy(K, y, 10.0, 1e-6, 10**6)
    assert a[0].tobytes() == b[0].tobytes()
    assert a[2:] == b[2:]


def test_log_gauss_parity():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((40, 5))
    mu = rng.standard_normal((3, 5))
    var = rng.uniform(0.2, 2.0, (3, 5))
    a = fisher._log_gauss_numba(X, mu, var)
    b = fisher._log_gauss_numpy(X, mu, var)
    assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, np.abs(a).max())


def test_env_flag_selects_numpy_paths():
    code = ("from pillarmkl import _accel, svm, kernels, fisher;"
            "print(_accel.USE_NUMBA, svm._smo is svm._smo_numpy,"
            " kernels._sqdist is kernels._sqdist_numpy, fisher._log_gauss is fisher._log_gauss_numpy)")
    env = dict(os.environ, PILLARMKL_NO_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True).stdout.split()
    assert out == ["False", "True", "True", "True"]


def test_fallback_results_match():
    code = ("import numpy as np; from pillarmkl import svm;"
            "K = np.array([[1.0, -1.0], [-1.0, 1.0]]);"
            "m = svm.smo_train(K, np.array([1.0, -1.0]));"
            "print(repr(m.alpha.tolist()), repr(m.b))")
    env = dict(os.environ, PILLARMKL_NO_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True).stdout.strip()
    m = svm.smo_train(np.array([[1.0, -1.0], [-1.0, 1.0]]), np.array([1.0, -1.0]))
    assert out == f"{m.alpha.tolist()!r} {m.b!r}"
