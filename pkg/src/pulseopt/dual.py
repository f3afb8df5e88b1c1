"""Vector-mode dual numbers for forward automatic differentiation.

A :class:`Dual` carries a value array ``val`` and a tangent array ``der``
whose shape is ``val.shape + (width,)``; the trailing axis holds the partial
derivatives with respect to ``width`` seeded input directions.  Arithmetic
broadcasts like numpy on the leading axes.

The module-level functions (:func:`exp`, :func:`sigmoid`, ...) accept either
plain arrays/scalars or duals, so numerical code written against them is
generic over the scalar type.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Dual",
    "seed",
    "stack",
    "value",
    "exp",
    "log",
    "sin",
    "cos",
    "sigmoid",
    "softplus",
    "sqrt",
    "conj",
    "real",
    "imag",
]


def _bcast(der, shape):
    # tangent broadcast: leading axes follow the value, trailing axis is width
    return np.broadcast_to(der, tuple(shape) + der.shape[-1:])


class Dual:
    """Value plus a vector of partial derivatives."""

    __slots__ = ("val", "der")
    __array_ufunc__ = None

    def __init__(self, val, der):
        val = np.asarray(val)
        der = np.asarray(der)
        if der.shape[:-1] != val.shape:
            raise ValueError(
                f"tangent shape {der.shape} does not extend value shape {val.shape}"
            )
        self.val = val
        self.der = der

    # --- construction ---------------------------------------------------
    @classmethod
    def constant(cls, val, width):
        val = np.asarray(val)
        return cls(val, np.zeros(val.shape + (width,), dtype=val.dtype))

    @property
    def width(self):
        return self.der.shape[-1]

    @property
    def shape(self):
        return self.val.shape

    @property
    def ndim(self):
        return self.val.ndim

    @property
    def dtype(self):
        return self.val.dtype

    def __len__(self):
        return len(self.val)

    def __repr__(self):
        return f"Dual(val={self.val!r}, der={self.der!r})"

    # --- indexing and reshaping -------------------------------------------
    def __getitem__(self, idx):
        v = self.val[idx]
        if not isinstance(idx, tuple):
            idx = (idx,)
        d = self.der[idx + (Ellipsis,)] if Ellipsis not in idx else self.der[idx]
        return Dual(v, d)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        v = self.val.reshape(shape)
        return Dual(v, self.der.reshape(v.shape + (self.width,)))

    def ravel(self):
        return self.reshape(-1)

    @property
    def T(self):
        if self.ndim != 2:
            raise ValueError("transpose is defined for 2-D duals only")
        return Dual(self.val.T, np.swapaxes(self.der, 0, 1))

    def sum(self, axis=None):
        if axis is None:
            axes = tuple(range(self.ndim))
        else:
            axes = (axis,) if np.isscalar(axis) else tuple(axis)
            axes = tuple(a % self.ndim for a in axes)
        return Dual(self.val.sum(axis=axes), self.der.sum(axis=axes))

    def prod(self):
        out = Dual(np.ones((), dtype=self.dtype), np.zeros(self.width, dtype=self.dtype))
        for item in self.ravel():
            out = out * item
        return out

    # --- arithmetic ---------------------------------------------------------
    def __neg__(self):
        return Dual(-self.val, -self.der)

    def __pos__(self):
        return self

    def __add__(self, other):
        if isinstance(other, Dual):
            v = self.val + other.val
            return Dual(v, _bcast(self.der, v.shape) + _bcast(other.der, v.shape))
        v = self.val + other
        return Dual(v, _bcast(self.der, v.shape))

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual):
            v = self.val * other.val
            d = self.der * other.val[..., None] + self.val[..., None] * other.der
            return Dual(v, _bcast(d, v.shape))
        other = np.asarray(other)
        v = self.val * other
        return Dual(v, _bcast(self.der * other[..., None], v.shape))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            return self * other.reciprocal()
        other = np.asarray(other)
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def reciprocal(self):
        inv = 1.0 / self.val
        return Dual(inv, -self.der * (inv * inv)[..., None])

    def __pow__(self, power):
        if isinstance(power, Dual):
            return exp(power * log(self))
        v = self.val**power
        return Dual(v, self.der * (power * self.val ** (power - 1))[..., None])

    def __matmul__(self, other):
        if isinstance(other, Dual):
            v = self.val @ other.val
            d = _matmul_tangent(self.der, other.val, left=True) + _matmul_tangent(
                other.der, self.val, left=False
            )
            return Dual(v, d)
        other = np.asarray(other)
        return Dual(self.val @ other, _matmul_tangent(self.der, other, left=True))

    def __rmatmul__(self, other):
        other = np.asarray(other)
        return Dual(other @ self.val, _matmul_tangent(self.der, other, left=False))

    # comparisons act on values so control flow follows the primal path
    def __lt__(self, other):
        return self.val < value(other)

    def __le__(self, other):
        return self.val <= value(other)

    def __gt__(self, other):
        return self.val > value(other)

    def __ge__(self, other):
        return self.val >= value(other)

    def __abs__(self):
        if np.iscomplexobj(self.val):
            raise TypeError("abs of a complex dual is not differentiable at 0; use real/imag")
        return Dual(np.abs(self.val), self.der * np.sign(self.val)[..., None])


def _matmul_tangent(der, mat, left):
    """Tangent of ``A @ M`` (left=True, der belongs to A) or ``M @ A``."""
    if der.ndim == 2 and not left:
        # A is a vector: its tangent is already a column block
        return mat @ der
    # move the width axis to the front so ordinary matmul broadcasting applies
    d = np.moveaxis(der, -1, 0)
    out = d @ mat if left else mat @ d
    return np.moveaxis(out, 0, -1)


def seed(x):
    """Lift a 1-D array to a dual whose tangent is the identity."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("seed expects a 1-D parameter vector")
    return Dual(x.copy(), np.eye(x.size))


def stack(items):
    """np.stack for a sequence mixing duals and plain numbers."""
    width = next((it.width for it in items if isinstance(it, Dual)), None)
    if width is None:
        return np.stack([np.asarray(it) for it in items])
    parts = [it if isinstance(it, Dual) else Dual.constant(it, width) for it in items]
    return Dual(np.stack([p.val for p in parts]), np.stack([p.der for p in parts]))


def value(x):
    return x.val if isinstance(x, Dual) else x


def _unary(x, f, df):
    if isinstance(x, Dual):
        fx = f(x.val)
        return Dual(fx, x.der * df(x.val, fx)[..., None])
    return f(x)


def exp(x):
    return _unary(x, np.exp, lambda v, fv: fv)


def log(x):
    return _unary(x, np.log, lambda v, fv: 1.0 / v)


def sqrt(x):
    return _unary(x, np.sqrt, lambda v, fv: 0.5 / fv)


def sin(x):
    return _unary(x, np.sin, lambda v, fv: np.cos(v))


def cos(x):
    return _unary(x, np.cos, lambda v, fv: -np.sin(v))


def _sigmoid(x):
    x = np.asarray(x, dtype=float)
    # two-branch form avoids overflow in exp for large |x|
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(x):
    """Logistic function 1/(1+e^-x); derivative s(1-s)."""
    return _unary(x, _sigmoid, lambda v, fv: fv * (1.0 - fv))


def softplus(x):
    """ln(1+e^x) evaluated without overflow; derivative is the logistic."""
    return _unary(x, lambda v: np.logaddexp(0.0, v), lambda v, fv: _sigmoid(v))


def conj(x):
    if isinstance(x, Dual):
        return Dual(np.conj(x.val), np.conj(x.der))
    return np.conj(x)


def real(x):
    if isinstance(x, Dual):
        return Dual(np.real(x.val), np.real(x.der))
    return np.real(x)


def imag(x):
    if isinstance(x, Dual):
        return Dual(np.imag(x.val), np.imag(x.der))
    return np.imag(x)
