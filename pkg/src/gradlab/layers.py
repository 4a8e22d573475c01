"""Layer primitives: descriptors, shape rules, and dual-generic forward/backward.

Every forward/backward is written against the operations in `dual`, so the
same code path produces plain gradients, gradients with a tangent in the
input (Jacobian-vector products), and gradients with a tangent in the
parameters (used by the inversion attack).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dual as dd
from .errors import ConfigError


@dataclass(frozen=True)
class Dense:
    in_dim: int
    out_dim: int
    bias: bool = True

    def out_shape(self, in_shape):
        if in_shape != (self.in_dim,):
            raise ConfigError(f"dense expects input shape ({self.in_dim},), got {in_shape}")
        return (self.out_dim,)

    def param_shapes(self):
        shapes = [("weight", (self.out_dim, self.in_dim))]
        if self.bias:
            shapes.append(("bias", (self.out_dim,)))
        return shapes

    def forward(self, x, params):
        out = dd.einsum("bi,oi->bo", x, params[0])
        if self.bias:
            out = out + params[1]
        return out, (x, params[0])

    def backward(self, cache, dout):
        x, w = cache
        dx = dd.einsum("bo,oi->bi", dout, w)
        dw = dd.einsum("bo,bi->oi", dout, x)
        grads = [dw]
        if self.bias:
            grads.append(dout.sum(axis=0))
        return dx, grads


@dataclass(frozen=True)
class Conv2d:
    in_ch: int
    out_ch: int
    kernel: int
    pad: int = 0

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_ch:
            raise ConfigError(f"conv2d expects (in_ch={self.in_ch}, h, w), got {in_shape}")
        h = in_shape[1] + 2 * self.pad - self.kernel + 1
        w = in_shape[2] + 2 * self.pad - self.kernel + 1
        if h < 1 or w < 1:
            raise ConfigError(f"conv2d kernel {self.kernel} too large for input {in_shape}")
        return (self.out_ch, h, w)

    def param_shapes(self):
        return [
            ("weight", (self.out_ch, self.in_ch, self.kernel, self.kernel)),
            ("bias", (self.out_ch,)),
        ]

    def _im2col(self, xp, ho, wo):
        def build(arr):
            b, c = arr.shape[0], arr.shape[1]
            cols = np.empty((b, c, self.kernel, self.kernel, ho, wo))
            for di in range(self.kernel):
                for dj in range(self.kernel):
                    cols[:, :, di, dj] = arr[:, :, di : di + ho, dj : dj + wo]
            return cols.reshape(b, c * self.kernel * self.kernel, ho * wo)

        return dd.lift_linear(build, xp)

    def _col2im(self, dcols, b, hp, wp, ho, wo):
        def build(arr):
            arr = arr.reshape(b, self.in_ch, self.kernel, self.kernel, ho, wo)
            dxp = np.zeros((b, self.in_ch, hp, wp))
            for di in range(self.kernel):
                for dj in range(self.kernel):
                    dxp[:, :, di : di + ho, dj : dj + wo] += arr[:, :, di, dj]
            return dxp

        return dd.lift_linear(build, dcols)

    def forward(self, x, params):
        in_shape = dd.value(x).shape[1:]
        ho, wo = self.out_shape(in_shape)[1:]
        p = self.pad

        def pad(arr):
            return np.pad(arr, ((0, 0), (0, 0), (p, p), (p, p))) if p else arr

        xp = dd.lift_linear(pad, x)
        cols = self._im2col(xp, ho, wo)
        wmat = params[0].reshape(self.out_ch, -1)
        out = dd.einsum("op,bpl->bol", wmat, cols)
        out = out + params[1].reshape(1, self.out_ch, 1)
        b = dd.value(x).shape[0]
        return out.reshape(b, self.out_ch, ho, wo), (cols, wmat, in_shape)

    def backward(self, cache, dout):
        cols, wmat, in_shape = cache
        b = dd.value(dout).shape[0]
        ho, wo = self.out_shape(in_shape)[1:]
        dflat = dout.reshape(b, self.out_ch, ho * wo)
        dw = dd.einsum("bol,bpl->op", dflat, cols)
        db = dflat.sum(axis=(0, 2))
        dcols = dd.einsum("op,bol->bpl", wmat, dflat)
        hp, wp = in_shape[1] + 2 * self.pad, in_shape[2] + 2 * self.pad
        dxp = self._col2im(dcols, b, hp, wp, ho, wo)
        p = self.pad

        def crop(arr):
            return arr[:, :, p : p + in_shape[1], p : p + in_shape[2]] if p else arr

        dx = dd.lift_linear(crop, dxp)
        dw = dw.reshape(self.out_ch, self.in_ch, self.kernel, self.kernel)
        return dx, [dw, db]


@dataclass(frozen=True)
class LeakyRelu:
    slope: float = 0.01

    def out_shape(self, in_shape):
        return in_shape

    def param_shapes(self):
        return []

    def forward(self, x, params):
        # subgradient convention: the x >= 0 branch has factor 1
        factor = np.where(dd.value(x) >= 0.0, 1.0, self.slope)
        return x * factor, factor

    def backward(self, cache, dout):
        return dout * cache, []


@dataclass(frozen=True)
class MaxPool:
    kernel: int

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ConfigError(f"max_pool expects (c, h, w), got {in_shape}")
        c, h, w = in_shape
        if h % self.kernel or w % self.kernel:
            raise ConfigError(f"max_pool kernel {self.kernel} must divide spatial dims {in_shape}")
        return (c, h // self.kernel, w // self.kernel)

    def param_shapes(self):
        return []

    def _windows(self, x, c, h2, w2):
        k = self.kernel

        def build(arr):
            b = arr.shape[0]
            arr = arr.reshape(b, c, h2, k, w2, k)
            return arr.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h2, w2, k * k)

        return dd.lift_linear(build, x)

    def forward(self, x, params):
        c, h, w = dd.value(x).shape[1:]
        h2, w2 = h // self.kernel, w // self.kernel
        win = self._windows(x, c, h2, w2)
        # ties: np.argmax keeps the first (lowest window offset) maximum
        idx = np.argmax(dd.value(win), axis=-1)[..., None]
        out = dd.take_along(win, idx, axis=-1)
        out = out.reshape(dd.value(x).shape[0], c, h2, w2)
        return out, (idx, (c, h, w))

    def backward(self, cache, dout):
        idx, (c, h, w) = cache
        k = self.kernel
        b = dd.value(dout).shape[0]
        h2, w2 = h // k, w // k
        dwin = dd.scatter_along(idx, -1, dout.reshape(b, c, h2, w2, 1), (b, c, h2, w2, k * k))

        def unbuild(arr):
            arr = arr.reshape(b, c, h2, w2, k, k).transpose(0, 1, 2, 4, 3, 5)
            return arr.reshape(b, c, h, w)

        return dd.lift_linear(unbuild, dwin), []


@dataclass(frozen=True)
class Flatten:
    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def param_shapes(self):
        return []

    def forward(self, x, params):
        shape = dd.value(x).shape
        return x.reshape(shape[0], -1), shape

    def backward(self, cache, dout):
        return dout.reshape(cache), []


LAYER_KINDS = {
    "dense": Dense,
    "conv2d": Conv2d,
    "leaky_relu": LeakyRelu,
    "max_pool": MaxPool,
    "flatten": Flatten,
}
