"""Minimal numpy layers with explicit backward passes.

Images are (B, C, Ma, Mp): axis 2 is azimuth and wraps around, axis 3 is the
polar angle and is padded by reflection. Layers cache what they need during
``forward`` and accumulate parameter gradients in ``backward``.
"""

import numpy as np


def _reflect_index(n, pad):
    idx = np.arange(-pad, n + pad)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


class Pad:
    """Circular padding along azimuth, reflective along the polar axis."""

    def __init__(self, pad):
        self.pad = int(pad)

    def forward(self, x):
        p = self.pad
        self.shape = x.shape
        if p == 0:
            return x
        h, w = x.shape[2], x.shape[3]
        self.ih = np.mod(np.arange(-p, h + p), h)
        self.iw = _reflect_index(w, p)
        return x[:, :, self.ih][:, :, :, self.iw]

    def backward(self, g):
        if self.pad == 0:
            return g
        p = self.pad
        h, w = self.shape[2], self.shape[3]
        border = [*range(p), *range(p + h, 2 * p + h)]
        gh = g[:, :, p:p + h].copy()
        for i in border:
            gh[:, :, self.ih[i]] += g[:, :, i]
        border = [*range(p), *range(p + w, 2 * p + w)]
        gx = gh[:, :, :, p:p + w].copy()
        for j in border:
            gx[:, :, :, self.iw[j]] += gh[:, :, :, j]
        return gx


class Conv2d:
    def __init__(self, cin, cout, k=3, stride=1, dilation=1, groups=1, rng=None, dtype=np.float32,
                 gain=1.0):
        if cin % groups or cout % groups:
            raise ValueError(f"channels {cin}->{cout} not divisible by groups={groups}")
        self.cin, self.cout, self.k = cin, cout, k
        self.stride, self.dilation, self.groups = stride, dilation, groups
        self.padder = Pad(dilation * (k - 1) // 2)
        rng = np.random.default_rng(0) if rng is None else rng
        fan_in = (cin // groups) * k * k
        std = gain * np.sqrt(2.0 / fan_in)
        self.weight = (rng.standard_normal((cout, cin // groups, k, k)) * std).astype(dtype)
        self.bias = np.zeros(cout, dtype=dtype)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)

    def params(self):
        return [("weight", self.weight, self.grad_weight), ("bias", self.bias, self.grad_bias)]

    def _windows(self, xp, ho, wo):
        s, d = self.stride, self.dilation
        for ki in range(self.k):
            for kj in range(self.k):
                yield (slice(None), slice(None),
                       slice(ki * d, ki * d + s * (ho - 1) + 1, s),
                       slice(kj * d, kj * d + s * (wo - 1) + 1, s))

    def forward(self, x):
        if x.shape[1] != self.cin:
            raise ValueError(f"expected {self.cin} input channels, got {x.shape[1]}")
        xp = self.padder.forward(x)
        b, c, hp, wp = xp.shape
        span = self.dilation * (self.k - 1)
        ho = (hp - span - 1) // self.stride + 1
        wo = (wp - span - 1) // self.stride + 1
        g, kk = self.groups, self.k * self.k
        cols = np.stack([xp[sl] for sl in self._windows(xp, ho, wo)], axis=2)  # (B, C, kk, Ho, Wo)
        cols = cols.reshape(b, g, c // g, kk, ho, wo).transpose(1, 0, 4, 5, 2, 3)
        cols = np.ascontiguousarray(cols).reshape(g, b * ho * wo, (c // g) * kk)
        w = self.weight.reshape(g, self.cout // g, -1)
        out = cols @ w.transpose(0, 2, 1)                                    # (G, N, Og)
        out = out.reshape(g, b, ho, wo, self.cout // g).transpose(1, 0, 4, 2, 3)
        out = out.reshape(b, self.cout, ho, wo) + self.bias[None, :, None, None]
        self._cache = (cols, xp.shape, ho, wo)
        return out

    def backward(self, gout):
        cols, xshape, ho, wo = self._cache
        b, c = xshape[0], xshape[1]
        g, kk = self.groups, self.k * self.k
        og = self.cout // g
        gg = gout.reshape(b, g, og, ho, wo).transpose(1, 0, 3, 4, 2).reshape(g, b * ho * wo, og)
        self.grad_weight += (gg.transpose(0, 2, 1) @ cols).reshape(self.weight.shape)
        self.grad_bias += gout.sum(axis=(0, 2, 3))
        w = self.weight.reshape(g, og, -1)
        dcols = (gg @ w).reshape(g, b, ho, wo, c // g, kk).transpose(1, 0, 4, 5, 2, 3)
        dcols = dcols.reshape(b, c, kk, ho, wo)
        dxp = np.zeros(xshape, dtype=gout.dtype)
        for i, sl in enumerate(self._windows(dxp, ho, wo)):
            dxp[sl] += dcols[:, :, i]
        return self.padder.backward(dxp)


class ReLU:
    def forward(self, x):
        self.mask = x > 0
        return x * self.mask

    def backward(self, g):
        return g * self.mask


class Upsample:
    """Nearest-neighbor x2, cropped to a target spatial size."""

    def forward(self, x, size):
        self.in_shape = x.shape
        h, w = size
        return x.repeat(2, axis=2).repeat(2, axis=3)[:, :, :h, :w]

    def backward(self, g):
        b, c, h, w = self.in_shape
        full = np.zeros((b, c, 2 * h, 2 * w), dtype=g.dtype)
        full[:, :, :g.shape[2], :g.shape[3]] = g
        return full.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5))


class BoundedOutput:
    """``tau * tanh(z)``; keeps outputs in ``(-tau, tau)`` with live gradients."""

    def __init__(self, tau):
        self.tau = float(tau)

    def forward(self, z):
        self.t = np.tanh(z)
        return self.tau * self.t

    def backward(self, g):
        return g * self.tau * (1.0 - self.t * self.t)
