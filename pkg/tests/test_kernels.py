"""Backend parity: the compiled kernels must match the numpy fallback."""

import numpy as np
import pytest

from bbkd import kernels
from bbkd.kernels import _fallback

core = pytest.importorskip("bbkd.kernels._core", reason="compiled extension not built")


def cases():
    rng = np.random.default_rng(0)
    shapes = [
        ((1, 4, 4), (1, 1, 1, 1)),
        ((2, 8, 8), (4, 2, 3, 3)),
        ((3, 5, 9), (2, 3, 5, 3)),
        ((4, 16, 16), (4, 4, 3, 3)),
    ]
    for xs, ws in shapes:
        x = rng.standard_normal(xs)
        w = rng.standard_normal(ws)
        b = rng.standard_normal(ws[0])
        gy = rng.standard_normal((ws[0],) + xs[1:])
        yield x, w, b, gy


class TestBackendParity:
    def test_forward(self):
        for x, w, b, _ in cases():
            np.testing.assert_allclose(
                core.conv2d_forward(x, w, b), _fallback.conv2d_forward(x, w, b), atol=1e-12
            )

    def test_grad_input(self):
        for x, w, _, gy in cases():
            np.testing.assert_allclose(
                core.conv2d_grad_input(w, gy), _fallback.conv2d_grad_input(w, gy), atol=1e-12
            )

    def test_grad_kernels(self):
        for x, w, _, gy in cases():
            kh, kw = w.shape[2], w.shape[3]
            np.testing.assert_allclose(
                core.conv2d_grad_kernels(x, gy, kh, kw),
                _fallback.conv2d_grad_kernels(x, gy, kh, kw),
                atol=1e-12,
            )

    def test_selected_backend_is_exposed(self):
        assert kernels.BACKEND in ("compiled", "numpy")
        assert kernels.HAVE_EXTENSION == (kernels.BACKEND == "compiled")

    def test_noncontiguous_inputs_accepted(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((4, 8, 8))[::2]
        w = rng.standard_normal((2, 2, 3, 3))
        b = rng.standard_normal(2)
        np.testing.assert_allclose(
            core.conv2d_forward(x, w, b), _fallback.conv2d_forward(np.ascontiguousarray(x), w, b), atol=1e-12
        )
