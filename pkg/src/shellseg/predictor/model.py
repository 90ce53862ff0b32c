"""Encoder-decoder regressor from projection images to per-direction distances.

Three down-sampling and three up-sampling blocks. Every block ends in three
2-group convolutions with dilation 2 wrapped in a short residual connection;
decoder blocks also add the encoder output of matching resolution (long
residual). Down-sampling is a stride-2 convolution, up-sampling is nearest x2
followed by a convolution. Odd sizes are handled by cropping after
up-sampling, so any spatial size works.
"""

import json
from pathlib import Path

import numpy as np

from ..shell import ChannelSpec, project
from .nn import BoundedOutput, Conv2d, ReLU, Upsample

ARCH = "conv_regressor_v1"


class ResBlock:
    def __init__(self, width, rng, dtype):
        self.convs = [Conv2d(width, width, 3, dilation=2, groups=2, rng=rng, dtype=dtype,
                             gain=1.0 if i < 2 else 0.5) for i in range(3)]
        self.acts = [ReLU() for _ in range(3)]

    def forward(self, x):
        h = self.acts[0].forward(self.convs[0].forward(x))
        h = self.acts[1].forward(self.convs[1].forward(h))
        h = self.convs[2].forward(h)
        return self.acts[2].forward(x + h)

    def backward(self, g):
        g = self.acts[2].backward(g)
        skip = g
        g = self.convs[2].backward(g)
        g = self.convs[1].backward(self.acts[1].backward(g))
        g = self.convs[0].backward(self.acts[0].backward(g))
        return g + skip

    def layers(self):
        return self.convs


class DownBlock:
    def __init__(self, cin, cout, rng, dtype):
        self.down = Conv2d(cin, cout, 3, stride=2, rng=rng, dtype=dtype)
        self.act = ReLU()
        self.res = ResBlock(cout, rng, dtype)

    def forward(self, x):
        return self.res.forward(self.act.forward(self.down.forward(x)))

    def backward(self, g):
        return self.down.backward(self.act.backward(self.res.backward(g)))

    def layers(self):
        return [self.down] + self.res.layers()


class UpBlock:
    def __init__(self, cin, cout, rng, dtype):
        self.up = Upsample()
        self.conv = Conv2d(cin, cout, 3, rng=rng, dtype=dtype)
        self.act = ReLU()
        self.res = ResBlock(cout, rng, dtype)

    def forward(self, x, skip):
        h = self.act.forward(self.conv.forward(self.up.forward(x, skip.shape[2:])))
        return self.res.forward(h + skip)

    def backward(self, g):
        g = self.res.backward(g)
        gx = self.up.backward(self.conv.backward(self.act.backward(g)))
        return gx, g

    def layers(self):
        return [self.conv] + self.res.layers()


class ConvRegressor:
    """``O = tau * tanh(f(I))`` with an encoder-decoder ``f``.

    ``spec`` fixes the input channel layout; intensity channels are multiplied
    by ``input_scale`` and direction channels pass through unchanged.
    """

    def __init__(self, spec=None, base_width=16, tau=2.0, input_scale=0.01, seed=0,
                 dtype=np.float32):
        self.spec = spec or ChannelSpec()
        self.base_width = int(base_width)
        if self.base_width < 2 or self.base_width % 2:
            raise ValueError("base_width must be an even integer >= 2")
        self.tau = float(tau)
        self.input_scale = float(input_scale)
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(self.seed)
        cin = self.spec.n_channels
        w0 = self.base_width
        widths = [w0, w0, 2 * w0, 2 * w0]
        self.widths = widths
        self.stem = Conv2d(cin, w0, 3, groups=2 if cin % 2 == 0 else 1, rng=rng, dtype=dtype)
        self.stem_act = ReLU()
        self.downs = [DownBlock(widths[i], widths[i + 1], rng, dtype) for i in range(3)]
        self.ups = [UpBlock(widths[3 - i], widths[2 - i], rng, dtype) for i in range(3)]
        self.head = Conv2d(w0, 1, 1, rng=rng, dtype=dtype, gain=0.1)
        self.out = BoundedOutput(self.tau)
        self._scale = self._channel_scale()

    def _channel_scale(self):
        s = self.spec
        scale = []
        for n_int in (s.la, s.lb)[:s.parts]:
            scale += [self.input_scale] * n_int
            if s.append_directions:
                scale += [1.0] * 3
        return np.asarray(scale, dtype=self.dtype)[None, :, None, None]

    def layers(self):
        out = [self.stem]
        for blk in self.downs:
            out += blk.layers()
        for blk in self.ups:
            out += blk.layers()
        return out + [self.head]

    def parameters(self):
        """``(name, value, grad)`` triples in a fixed order."""
        out = []
        for i, layer in enumerate(self.layers()):
            for name, value, grad in layer.params():
                out.append((f"layer{i}.{name}", value, grad))
        return out

    def n_params(self):
        return int(sum(v.size for _, v, _ in self.parameters()))

    def zero_grad(self):
        for _, _, g in self.parameters():
            g[...] = 0

    def forward(self, images):
        x = np.asarray(images, dtype=self.dtype)
        single = x.ndim == 3
        if single:
            x = x[None]
        if x.shape[1] != self.spec.n_channels:
            raise ValueError(f"model expects {self.spec.n_channels} channels, got {x.shape[1]}")
        x = x * self._scale
        skips = [self.stem_act.forward(self.stem.forward(x))]
        for blk in self.downs:
            skips.append(blk.forward(skips[-1]))
        h = skips[-1]
        for i, blk in enumerate(self.ups):
            h = blk.forward(h, skips[2 - i])
        o = self.out.forward(self.head.forward(h))[:, 0]
        return o[0] if single else o

    def backward(self, grad_out):
        """Back-propagate d(loss)/d(output) of shape (B, Ma, Mp); fills parameter grads."""
        g = self.head.backward(self.out.backward(np.asarray(grad_out, dtype=self.dtype)[:, None]))
        skip_grads = [None, None, None]
        for j in (2, 1, 0):
            g, skip_grads[2 - j] = self.ups[j].backward(g)
        # g is now the gradient at the deepest encoder output
        for i in (2, 1, 0):
            g = self.downs[i].backward(g) + skip_grads[i]
        self.stem.backward(self.stem_act.backward(g))

    def astype(self, dtype):
        """Copy of the model with parameters cast to ``dtype``."""
        clone = ConvRegressor(self.spec, self.base_width, self.tau, self.input_scale, self.seed, dtype)
        for (_, dst, gdst), (_, src, _) in zip(clone.parameters(), self.parameters()):
            dst[...] = src
            gdst[...] = 0
        return clone

    # predictor contract
    def predict(self, vol, grid, pivots, radii, batch=8):
        images = project(vol, pivots, radii, grid, self.spec)
        single = images.ndim == 3
        if single:
            images = images[None]
        out = np.concatenate([self.forward(images[s:s + batch]) for s in range(0, len(images), batch)])
        out = out.astype(np.float64)
        return out[0] if single else out

    def manifest(self):
        return {
            "arch": ARCH,
            "channels": {"la": self.spec.la, "lb": self.spec.lb,
                         "append_directions": self.spec.append_directions},
            "base_width": self.base_width,
            "widths": self.widths,
            "tau": self.tau,
            "input_scale": self.input_scale,
            "seed": self.seed,
            "dtype": "f32",
            "params": [{"name": n, "shape": list(v.shape)} for n, v, _ in self.parameters()],
            "n_params": self.n_params(),
        }

    def save(self, path):
        """Write ``path.bin`` (little-endian float32 parameters) and ``path.json``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        blob = b"".join(np.asarray(v, dtype="<f4").tobytes() for _, v, _ in self.parameters())
        path.with_suffix(".bin").write_bytes(blob)
        path.with_suffix(".json").write_text(json.dumps(self.manifest(), indent=2) + "\n")

    @classmethod
    def load(cls, path):
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        if meta.get("arch") != ARCH:
            raise ValueError(f"{path}: unsupported architecture {meta.get('arch')!r}")
        spec = ChannelSpec(**meta["channels"])
        model = cls(spec, meta["base_width"], meta["tau"], meta["input_scale"], meta["seed"])
        blob = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f4")
        offset = 0
        for (name, value, _), entry in zip(model.parameters(), meta["params"]):
            if entry["name"] != name or list(value.shape) != entry["shape"]:
                raise ValueError(f"{path}: parameter {entry['name']} does not match the architecture")
            value[...] = blob[offset:offset + value.size].reshape(value.shape)
            offset += value.size
        if offset != blob.size:
            raise ValueError(f"{path}: parameter blob has {blob.size} values, expected {offset}")
        return model
