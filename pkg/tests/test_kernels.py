import os
import subprocess
import sys

import numpy as np
import pytest

from dpltta import _kernels as K
from dpltta._kernels import conv_numpy

try:
    from dpltta._kernels import _convolve
except ImportError:
    _convolve = None

needs_ext = pytest.mark.skipif(_convolve is None,
                               reason="compiled extension unavailable")


def _rand_case(rng, n=2, ci=3, co=4, h=7, w=6, kh=3, kw=3, pad=1):
    x = rng.standard_normal((n, ci, h, w))
    wt = rng.standard_normal((co, ci, kh, kw))
    ho, wo = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
    gy = rng.standard_normal((n, co, ho, wo))
    return x, wt, gy, pad


def test_numpy_forward_matches_direct_loops(rng):
    x, wt, gy, pad = _rand_case(rng)
    got = conv_numpy.conv2d_forward(x, wt, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ref = np.zeros_like(got)
    n, co, ho, wo = got.shape
    for b in range(n):
        for o in range(co):
            for i in range(ho):
                for j in range(wo):
                    ref[b, o, i, j] = (xp[b, :, i:i + 3, j:j + 3] * wt[o]).sum()
    np.testing.assert_allclose(got, ref, atol=1e-12)


@needs_ext
@pytest.mark.parametrize("shape", [
    dict(),
    dict(pad=0),
    dict(kh=1, kw=1, pad=0),
    dict(kh=5, kw=5, pad=2),   # generic non-3 path
    dict(h=1, w=9, kh=1, kw=3, pad=1),
    dict(n=1, ci=1, co=1),
])
def test_backends_agree(rng, shape):
    x, wt, gy, pad = _rand_case(rng, **shape)
    kh, kw = wt.shape[2], wt.shape[3]
    h, w = x.shape[2], x.shape[3]
    np.testing.assert_allclose(
        _convolve.conv2d_forward(x, wt, pad),
        conv_numpy.conv2d_forward(x, wt, pad), atol=1e-12)
    np.testing.assert_allclose(
        _convolve.conv2d_grad_input(wt, gy, pad, h, w),
        conv_numpy.conv2d_grad_input(wt, gy, pad, h, w), atol=1e-12)
    np.testing.assert_allclose(
        _convolve.conv2d_grad_weight(x, gy, pad, kh, kw),
        conv_numpy.conv2d_grad_weight(x, gy, pad, kh, kw), atol=1e-12)


def test_grad_input_is_adjoint_of_forward(rng):
    # <conv(x, w), gy> == <x, grad_input(w, gy)> for a linear map
    x, wt, gy, pad = _rand_case(rng)
    y = K.conv2d_forward(x, wt, pad)
    gx = K.conv2d_grad_input(wt, gy, pad, x.shape[2], x.shape[3])
    assert abs((y * gy).sum() - (x * gx).sum()) < 1e-9


def test_grad_weight_is_adjoint_in_weights(rng):
    x, wt, gy, pad = _rand_case(rng)
    y = K.conv2d_forward(x, wt, pad)
    gw = K.conv2d_grad_weight(x, gy, pad, wt.shape[2], wt.shape[3])
    assert abs((y * gy).sum() - (wt * gw).sum()) < 1e-9


def test_channel_mismatch_raises(rng):
    x = rng.standard_normal((1, 3, 5, 5))
    wt = rng.standard_normal((2, 4, 3, 3))
    with pytest.raises(ValueError):
        K.conv2d_forward(x, wt, 1)


def test_noncontiguous_input_accepted(rng):
    base = rng.standard_normal((2, 6, 8, 8))
    x = base[:, ::2]  # stride trick, not C-contiguous
    wt = rng.standard_normal((4, 3, 3, 3))
    np.testing.assert_allclose(
        K.conv2d_forward(x, wt, 1),
        K.conv2d_forward(np.ascontiguousarray(x), wt, 1), atol=0)


def test_env_override_selects_numpy():
    code = ("import dpltta; import dpltta._kernels as k; "
            "print(dpltta.KERNEL_BACKEND, k.BACKEND)")
    env = dict(os.environ, DPLTTA_KERNEL_BACKEND="numpy")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert out.stdout.split() == ["numpy", "numpy"]


def test_env_override_rejects_unknown_backend():
    env = dict(os.environ, DPLTTA_KERNEL_BACKEND="cuda")
    out = subprocess.run([sys.executable, "-c", "import dpltta"], env=env,
                         capture_output=True, text=True)
    assert out.returncode != 0
    assert "DPLTTA_KERNEL_BACKEND" in out.stderr
