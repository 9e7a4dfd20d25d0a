"""Backend dispatch: the compiled path must match the fallback bit for bit."""

import numpy as np
import pytest

from odconv import autodiff as ad
from odconv import backend, ops
from odconv.errors import ParameterError


@pytest.fixture(autouse=True)
def restore_backend():
    yield
    backend.set_backend("auto")


def test_set_backend_choices():
    assert backend.set_backend("numpy") == "numpy"
    assert backend.active_backend() == "numpy"
    assert backend.set_backend("auto") in ("numba", "numpy")
    with pytest.raises(ParameterError):
        backend.set_backend("cuda")


def test_warmup_reports_active_backend():
    assert backend.warmup() == backend.active_backend()


def test_im2col_col2im_round_trip_counts():
    # each input cell is gathered once per covering window; a col2im of
    # ones therefore counts window coverage
    backend.set_backend("numpy")
    x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    cols, (ho, wo) = backend.im2col(x, 3, 1, 1)
    assert cols.shape == (1, ho * wo, 9)
    cover = backend.col2im(np.ones_like(cols), x.shape, 3, 1, 1, ho, wo)
    assert cover[0, 0, 1, 1] == 9.0  # interior cell sits in all nine windows
    assert cover[0, 0, 0, 0] == 4.0  # corner only in four


def _conv_case(seed):
    rng = np.random.default_rng(seed)
    geom = ops.ConvGeometry(3, 2, 1, 2)
    x = rng.normal(size=(2, 4, 7, 9))
    W = rng.normal(size=(6, 2, 3, 3))
    return x, W, geom


def _forward_and_grads(x, W, geom):
    tape = ad.Tape()
    xn = tape.leaf(x)
    wn = tape.leaf(W)
    out = ad.record(tape, "conv2d", xn, wn, geom=geom)
    loss = ad.record(tape, "sum_all", out)
    ad.backward(tape, loss)
    return out.value, xn.grad, wn.grad


def test_backends_agree_bitwise():
    if backend.set_backend("auto") != "numba":
        pytest.skip("compiled backend unavailable")
    x, W, geom = _conv_case(0)
    backend.set_backend("numba")
    backend.warmup()
    out_nb, dx_nb, dw_nb = _forward_and_grads(x, W, geom)
    backend.set_backend("numpy")
    out_np, dx_np, dw_np = _forward_and_grads(x, W, geom)
    np.testing.assert_array_equal(out_nb, out_np)
    np.testing.assert_array_equal(dx_nb, dx_np)
    np.testing.assert_array_equal(dw_nb, dw_np)


def test_backends_agree_bitwise_im2col():
    if backend.set_backend("auto") != "numba":
        pytest.skip("compiled backend unavailable")
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 3, 8, 5))
    for k, stride, padding in ((1, 1, 0), (3, 1, 1), (3, 2, 0)):
        backend.set_backend("numba")
        cols_nb, dims = backend.im2col(x, k, stride, padding)
        back_nb = backend.col2im(cols_nb, x.shape, k, stride, padding, *dims)
        backend.set_backend("numpy")
        cols_np, dims2 = backend.im2col(x, k, stride, padding)
        back_np = backend.col2im(cols_np, x.shape, k, stride, padding, *dims2)
        assert dims == dims2
        np.testing.assert_array_equal(cols_nb, cols_np)
        np.testing.assert_array_equal(back_nb, back_np)
