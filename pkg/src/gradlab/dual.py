"""Forward-mode scalar differentiation threaded through numpy array code.

A Dual carries a value array and a tangent array of the same shape.  Layer
code written against the operations below runs unchanged on plain ndarrays
or on Duals; feeding Dual inputs (or Dual parameters) through a full
forward + backward pass yields the directional derivative of the gradient
itself, which is how the Jacobian-vector products in this package are
computed.
"""

from __future__ import annotations

import numpy as np


class Dual:
    """value + epsilon * tangent, with float64 numpy arrays for both parts."""

    __slots__ = ("val", "tan")

    def __init__(self, val, tan):
        self.val = np.asarray(val, dtype=np.float64)
        self.tan = np.asarray(tan, dtype=np.float64)
        if self.val.shape != self.tan.shape:
            raise ValueError(
                f"dual value/tangent shape mismatch: {self.val.shape} vs {self.tan.shape}"
            )

    @property
    def shape(self):
        return self.val.shape

    def __repr__(self):
        return f"Dual(val={self.val!r}, tan={self.tan!r})"

    # arithmetic -----------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.tan + other.tan)
        return Dual(self.val + other, self.tan + np.zeros_like(self.val + other))

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return Dual(-self.val, -self.tan)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val, self.val * other.tan + self.tan * other.val)
        out = self.val * other
        return Dual(out, self.tan * other + np.zeros_like(out))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            return Dual(
                self.val * inv,
                self.tan * inv - self.val * other.tan * inv * inv,
            )
        out = self.val / other
        return Dual(out, self.tan / other + np.zeros_like(out))

    def __rtruediv__(self, other):
        inv = 1.0 / self.val
        out = other * inv
        return Dual(out, -out * self.tan * inv)

    def __pow__(self, n):
        if not isinstance(n, (int, float)) or isinstance(n, Dual):
            raise TypeError("dual powers support plain numeric exponents only")
        return Dual(self.val**n, n * self.val ** (n - 1) * self.tan)

    # shape manipulation (linear, applied to both parts) --------------------

    def reshape(self, *shape):
        return Dual(self.val.reshape(*shape), self.tan.reshape(*shape))

    def transpose(self, *axes):
        return Dual(self.val.transpose(*axes), self.tan.transpose(*axes))

    def __getitem__(self, key):
        return Dual(self.val[key], self.tan[key])

    def sum(self, axis=None, keepdims=False):
        return Dual(
            self.val.sum(axis=axis, keepdims=keepdims),
            self.tan.sum(axis=axis, keepdims=keepdims),
        )

    def mean(self, axis=None, keepdims=False):
        return Dual(
            self.val.mean(axis=axis, keepdims=keepdims),
            self.tan.mean(axis=axis, keepdims=keepdims),
        )


def value(x):
    """Primal part of a Dual, or the array itself."""
    return x.val if isinstance(x, Dual) else x


def tangent(x):
    """Tangent part of a Dual; zeros for a plain array."""
    if isinstance(x, Dual):
        return x.tan
    return np.zeros_like(np.asarray(x, dtype=np.float64))


def lift_linear(fn, x):
    """Apply a linear array-to-array function to a Dual or plain array."""
    if isinstance(x, Dual):
        return Dual(fn(x.val), fn(x.tan))
    return fn(x)


def exp(x):
    if isinstance(x, Dual):
        ev = np.exp(x.val)
        return Dual(ev, ev * x.tan)
    return np.exp(x)


def log(x):
    if isinstance(x, Dual):
        return Dual(np.log(x.val), x.tan / x.val)
    return np.log(x)


def einsum(spec, a, b):
    """Two-operand einsum that propagates tangents through the bilinear form."""
    if isinstance(a, Dual) or isinstance(b, Dual):
        av, at = value(a), tangent(a)
        bv, bt = value(b), tangent(b)
        return Dual(np.einsum(spec, av, bv), np.einsum(spec, av, bt) + np.einsum(spec, at, bv))
    return np.einsum(spec, a, b)


def take_along(x, idx, axis):
    """Gather along an axis with primal-derived integer indices."""
    return lift_linear(lambda arr: np.take_along_axis(arr, idx, axis=axis), x)


def zeros_like_template(x, shape):
    """Zeros of a given shape, dual-valued when the template is dual."""
    if isinstance(x, Dual):
        return Dual(np.zeros(shape), np.zeros(shape))
    return np.zeros(shape)


def scatter_along(idx, axis, src, shape):
    """Inverse of take_along: place src at idx in a zero array of `shape`."""

    def put(dst, s):
        np.put_along_axis(dst, idx, s, axis=axis)
        return dst

    if isinstance(src, Dual):
        return Dual(put(np.zeros(shape), src.val), put(np.zeros(shape), src.tan))
    return put(np.zeros(shape), src)
