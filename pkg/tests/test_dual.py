import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulseopt import dual as ad

finite = st.floats(-3, 3, allow_nan=False)


def num_deriv(f, x, h=1e-6):
    return (f(x + h) - f(x - h)) / (2 * h)


@pytest.mark.parametrize(
    "fn, ref, dref",
    [
        (ad.sin, np.sin, np.cos),
        (ad.cos, np.cos, lambda x: -np.sin(x)),
        (ad.exp, np.exp, np.exp),
    ],
)
@given(x=finite)
def test_unary_identities(fn, ref, dref, x):
    d = fn(ad.seed(np.array([x])))
    assert d.val[0] == pytest.approx(ref(x), rel=1e-14, abs=1e-15)
    assert d.der[0, 0] == pytest.approx(dref(x), rel=1e-14, abs=1e-15)


@given(x=st.floats(-40, 40))
def test_sigmoid_derivative(x):
    d = ad.sigmoid(ad.seed(np.array([x])))
    s = 1 / (1 + np.exp(-x))
    assert d.val[0] == pytest.approx(s, rel=1e-13)
    assert d.der[0, 0] == pytest.approx(s * (1 - s), rel=1e-12, abs=1e-300)


def test_sigmoid_and_softplus_do_not_overflow():
    x = np.array([-800.0, 800.0])
    with np.errstate(over="raise"):
        assert ad.sigmoid(x).tolist() == [0.0, 1.0]
        sp = ad.softplus(x)
    assert sp[0] == 0.0 and sp[1] == 800.0


@settings(max_examples=50)
@given(a=finite, b=st.floats(0.5, 3))
def test_composite_matches_central_difference(a, b):
    def f(z):
        return ad.exp(-z * z / b) * ad.sin(3 * z) / (1 + z * z) + z**3

    got = f(ad.seed(np.array([a]))).der[0, 0]
    ref = num_deriv(lambda z: float(f(np.array([z]))[0]), a)
    assert got == pytest.approx(ref, rel=1e-6, abs=1e-8)


def test_vector_seed_gives_jacobian_of_matmul():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(4, 3)) + 1j * rng.normal(size=(4, 3))
    x = ad.seed(rng.normal(size=3))
    y = A @ x
    np.testing.assert_allclose(y.der, A, rtol=0, atol=1e-15)
    z = x @ A.T
    np.testing.assert_allclose(z.der, A, rtol=0, atol=1e-15)


def test_matrix_product_rule():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(3, 3))
    x = ad.seed(rng.normal(size=9))
    X = x.reshape(3, 3)
    P = X @ X  # d(X X) = dX X + X dX
    E = np.zeros(9)
    E[4] = 1.0
    dX = E.reshape(3, 3)
    expect = dX @ ad.value(X) + ad.value(X) @ dX
    np.testing.assert_allclose(P.der[..., 4], expect, atol=1e-14)
    assert (M @ X).der.shape == (3, 3, 9)


def test_division_and_power():
    x = ad.seed(np.array([2.0, 5.0]))
    q = x[0] / x[1]
    np.testing.assert_allclose(q.der, [1 / 5, -2 / 25])
    p = x[0] ** 3
    np.testing.assert_allclose(p.der, [12.0, 0.0])
    r = 1.0 / x[1]
    np.testing.assert_allclose(r.der, [0.0, -1 / 25])


def test_complex_parts_and_conjugate():
    x = ad.seed(np.array([0.7]))
    z = ad.exp(x) * (ad.cos(x) + 1j * ad.sin(x))
    np.testing.assert_allclose(ad.real(z).der[0, 0], np.exp(0.7) * (np.cos(0.7) - np.sin(0.7)))
    np.testing.assert_allclose(ad.imag(ad.conj(z)).val, -np.exp(0.7) * np.sin(0.7))


def test_stack_and_sum():
    x = ad.seed(np.array([1.0, 2.0, 3.0]))
    s = ad.stack([x[0] * x[1], x[2]])
    assert s.shape == (2,)
    np.testing.assert_allclose(s.der, [[2, 1, 0], [0, 0, 1]])
    np.testing.assert_allclose(x.sum().der, [1, 1, 1])
    np.testing.assert_allclose(x.prod().der, [6, 3, 2])


def test_comparisons_use_values_only():
    a = ad.Dual(np.array(1.0), np.array([5.0]))
    assert a < 2 and a >= 1 and not a > 1
    assert abs(ad.Dual(np.array(-2.0), np.array([1.0]))).der[0] == -1.0
