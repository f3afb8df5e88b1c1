from dataclasses import replace

import numpy as np
import pytest

from pulseopt import dual as ad
from pulseopt.autodiff import grad_dual, grad_fd, relative_errors
from pulseopt.errors import NumericalError
from pulseopt.loss import LossConfig, Problem

from conftest import published_vector

NO_BARRIER = Problem(loss=LossConfig(w_barrier=0.0))


@pytest.fixture(scope="module")
def table3_grad():
    x = published_vector("table3")
    return x, grad_dual(x, Problem())


def test_dual_reports_value_and_single_pass(table3_grad):
    x, rep = table3_grad
    assert rep.method == "dual" and rep.evaluations == 1
    assert rep.loss_value == pytest.approx(Problem()(x), rel=1e-14)
    assert rep.gradient.shape == (16,)


def test_fd_on_quadratic_is_exact():
    x = np.linspace(-3, 4, 16)
    rep = grad_fd(x, lambda p: float(np.sum(p**2)))
    np.testing.assert_allclose(rep.gradient, 2 * x, rtol=0, atol=1e-10)
    assert rep.evaluations == 33
    assert grad_fd(x, lambda p: float(np.sum(p**2)), scheme="forward").evaluations == 17


def test_fd_threads_do_not_change_result(monkeypatch):
    x = published_vector("table2")
    prob = Problem()
    serial = grad_fd(x, prob, threads=1).gradient
    monkeypatch.setenv("PULSE_THREADS", "3")
    pooled = grad_fd(x, prob).gradient
    np.testing.assert_array_equal(serial, pooled)


def test_fd_argument_checks():
    with pytest.raises(ValueError):
        grad_fd(np.ones(2), sum, h=0)
    with pytest.raises(ValueError):
        grad_fd(np.ones(2), sum, scheme="backward")


def test_dead_channel_has_zero_shape_partials():
    x = published_vector("table3")
    x[8 + 2] = 0.0  # channel 3 switched off
    g = grad_dual(x, NO_BARRIER).gradient
    assert g[8] == 0.0 and g[9] == 0.0
    # the loss is even in the dead amplitude (a sign flip is a gauge change)
    assert abs(g[10]) < 1e-12


def test_fd_error_converges_quadratically(table3_grad):
    x, rep = table3_grad
    prob = Problem()
    errs = [np.max(np.abs(grad_fd(x, prob, h=h).gradient - rep.gradient)) for h in (1e-3, 1e-4)]
    assert 50 < errs[0] / errs[1] < 200


def test_fd_error_curve_is_v_shaped(table3_grad):
    x, rep = table3_grad
    prob = Problem()
    hs = [10.0**-k for k in range(2, 11)]
    errs = [np.max(np.abs(grad_fd(x, prob, h=h).gradient - rep.gradient)) for h in hs]
    best = int(np.argmin(errs))
    assert 0 < best < len(hs) - 1
    assert errs[best] < 1e-2 * min(errs[0], errs[-1])


@pytest.mark.parametrize("name", ["table1", "table2", "table3"])
def test_dual_matches_fine_fd(name):
    """At h = 1e-5 the FD truncation error is ~1e-7 of the gradient scale."""
    x = published_vector(name)
    prob = Problem()
    g = grad_dual(x, prob).gradient
    fd = grad_fd(x, prob, h=1e-5).gradient
    scale = np.abs(g).max()
    assert np.max(np.abs(g - fd)) < 1e-5 * scale


def test_weight_linearity():
    x = published_vector("table2")
    zero = dict(w_init=0.0, w_mid=0.0, w_final=0.0, w_order=0.0, w_barrier=0.0)
    only = lambda **w: Problem(loss=LossConfig(**{**zero, **w}))  # noqa: E731
    g_init = grad_dual(x, only(w_init=1.0)).gradient
    g_final = grad_dual(x, only(w_final=1.0)).gradient
    g_mix = grad_dual(x, only(w_init=3.0, w_final=-0.0 + 2.0)).gradient
    np.testing.assert_allclose(g_mix, 3 * g_init + 2 * g_final, rtol=1e-12, atol=1e-14)


def test_nan_partial_names_parameter():
    class Broken:
        def evaluate(self, x):
            der = np.zeros(x.width)
            der[6] = np.nan
            return ad.Dual(np.array(1.0), der), None

    with pytest.raises(NumericalError, match=r"pulses\[1\]\.omega0") as e:
        grad_dual(np.ones(8), Broken())
    assert e.value.index == 6


def test_relative_errors_floor():
    np.testing.assert_allclose(relative_errors([0.0, 2.0], [1e-9, 2.2]), [0.1, 0.1])


def test_problem_replace_keeps_gradient_consistent():
    x = published_vector("table3")
    prob = replace(Problem(), loss=LossConfig(order_sharpness=3.0))
    g = grad_dual(x, prob).gradient
    assert np.all(np.isfinite(g))
