"""The numba and numpy kernel pairs must agree to rounding error.

Both modules are imported directly here, bypassing the backend selector, so
this suite exercises both implementations regardless of FEDBREG_BACKEND.
"""

import numpy as np
import pytest

from fedbreg import backend, models
from fedbreg import _kernels_numpy as knp

numba_kernels = pytest.importorskip("fedbreg._kernels_numba")

SHAPES_MCLR = [(1, 3, 2), (20, 60, 10), (7, 784, 10), (5, 4, 1)]
SHAPES_DNN = [(1, 3, 2, 4), (20, 60, 10, 16), (6, 30, 5, 100), (5, 4, 1, 3)]


@pytest.mark.parametrize("n,d,c", SHAPES_MCLR)
def test_mclr_backends_agree(n, d, c):
    rng = np.random.default_rng(n * 1000 + d + c)
    params = rng.normal(size=d * c + c)
    params.flags.writeable = False
    x = rng.random((n, d))
    y = rng.integers(0, c, n).astype(np.int64)
    a = knp.mclr_grad(params, x, y, c)
    b = numba_kernels.mclr_grad(params, x, y, c)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("n,d,c,h", SHAPES_DNN)
def test_dnn_backends_agree(n, d, c, h):
    rng = np.random.default_rng(n * 100 + d + c + h)
    dim = d * h + h + h * c + c
    params = rng.normal(size=dim)
    params.flags.writeable = False
    x = rng.random((n, d))
    y = rng.integers(0, c, n).astype(np.int64)
    a = knp.dnn_grad(params, x, y, h, c, 0.01)
    b = numba_kernels.dnn_grad(params, x, y, h, c, 0.01)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_backend_exposes_active_choice():
    assert backend.ACTIVE in ("numba", "numpy")


def test_dispatch_matches_direct_kernel_call():
    rng = np.random.default_rng(12)
    spec = models.ModelSpec("mclr", 9, 4)
    params = rng.normal(size=spec.param_dim)
    batch = models.Batch(rng.random((8, 9)), rng.integers(0, 4, 8))
    via_models = models.gradient(spec, params, batch)
    direct = backend.mclr_grad(
        np.ascontiguousarray(params), batch.inputs, batch.labels, 4
    )
    np.testing.assert_array_equal(via_models, direct)


def test_forced_numpy_backend_selectable(tmp_path):
    """FEDBREG_BACKEND=numpy must flip ACTIVE in a fresh interpreter."""
    import os
    import subprocess
    import sys

    code = "import fedbreg.backend as b; print(b.ACTIVE)"
    env = dict(os.environ, FEDBREG_BACKEND="numpy")
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True
    )
    assert out.stdout.strip() == "numpy"


def test_bogus_backend_value_fails_loudly():
    import os
    import subprocess
    import sys

    env = dict(os.environ, FEDBREG_BACKEND="gpu")
    out = subprocess.run(
        [sys.executable, "-c", "import fedbreg.backend"],
        env=env,
        capture_output=True,
        text=True,
    )
    assert out.returncode != 0
    assert "FEDBREG_BACKEND" in out.stderr
