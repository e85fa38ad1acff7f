"""Small U-Net backbone shared by the multi-blurring and deblurring models.

Encoder: ``levels`` stages of two 3x3 conv + leaky ReLU blocks; every stage
after the first opens with a stride-2 conv, so spatial dims must divide by
``2**(levels-1)``.  Stage ``l`` carries ``base_channels * 2**l`` channels.
Decoder: bilinear x2 upsample, concat of the matching encoder skip, two conv
blocks.  Two linear 3x3 heads sit on the final decoder features concatenated
with the raw input: an ``out_channels`` image head (the residual) and,
optionally, a ``feature_channels`` head used as the recurrent feature map.
Both heads are zero-initialized so a fresh network is an exact identity in
residual setups.

The input tap at the heads matters for training, not just expressiveness:
with the heads fed from learned features alone, the early optimization
pressure on small nets is dominated by "any residual is noise", which
shrinks the decoder features and the head together until every gradient
through the head vanishes (measured full-batch gradient ~1e-6/coordinate).
Raw input channels cannot shrink, so a pointwise combination of the inputs
stays one linear layer away at every point of training.
"""

from dataclasses import dataclass, asdict

import numpy as np

from mb2d.nn import autograd as ag

LEAKY_SLOPE = 0.1


@dataclass
class UNetSpec:
    in_channels: int
    base_channels: int = 8
    levels: int = 3
    out_channels: int = 3
    feature_channels: int = 0

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError(f"levels must be >= 2, got {self.levels}")
        if self.in_channels < 1 or self.base_channels < 1:
            raise ValueError("in_channels and base_channels must be positive")

    @property
    def spatial_divisor(self) -> int:
        return 2 ** (self.levels - 1)

    def to_dict(self):
        return asdict(self)


def _conv_shapes(spec: UNetSpec):
    """Yield (name, in_ch, out_ch, stride, zero_init) for every conv layer."""
    b = spec.base_channels
    cin = spec.in_channels
    for l in range(spec.levels):
        cout = b * 2**l
        yield f"enc{l}a", cin, cout, (1 if l == 0 else 2), False
        yield f"enc{l}b", cout, cout, 1, False
        cin = cout
    for l in range(spec.levels - 1, 0, -1):
        cskip = b * 2 ** (l - 1)
        yield f"dec{l}a", b * 2**l + cskip, cskip, 1, False
        yield f"dec{l}b", cskip, cskip, 1, False
    yield "head_img", b + spec.in_channels, spec.out_channels, 1, True
    if spec.feature_channels:
        yield "head_feat", b + spec.in_channels, spec.feature_channels, 1, True


def init_params(spec: UNetSpec, rng: np.random.Generator, dtype=np.float32, zero_init_heads=True):
    """He-style fan-in init for conv weights, zero biases, zero heads."""
    params = {}
    for name, cin, cout, _stride, is_head in _conv_shapes(spec):
        if is_head and zero_init_heads:
            w = np.zeros((cout, cin, 3, 3), dtype)
        else:
            std = np.sqrt(2.0 / ((1.0 + LEAKY_SLOPE**2) * cin * 9))
            w = (rng.standard_normal((cout, cin, 3, 3)) * std).astype(dtype)
        params[f"{name}.w"] = ag.parameter(w)
        params[f"{name}.b"] = ag.parameter(np.zeros(cout, dtype))
    return params


def param_count(spec: UNetSpec) -> int:
    total = 0
    for _name, cin, cout, _stride, _h in _conv_shapes(spec):
        total += cout * cin * 9 + cout
    return total


class UNet:
    """Backbone network; holds the spec and one parameter dict."""

    def __init__(self, spec: UNetSpec, params=None, rng=None, dtype=np.float32, zero_init_heads=True):
        self.spec = spec
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params = init_params(spec, rng, dtype=dtype, zero_init_heads=zero_init_heads)
        self.params = params

    def _conv(self, name, x, stride=1):
        return ag.conv3x3(x, self.params[f"{name}.w"], self.params[f"{name}.b"], stride)

    def _block(self, name, x, stride=1):
        return ag.leaky_relu(self._conv(name, x, stride), LEAKY_SLOPE)

    def forward(self, x: ag.Tensor):
        """Return (residual image, feature map or None)."""
        spec = self.spec
        if x.shape[1] != spec.in_channels:
            raise ValueError(f"expected {spec.in_channels} input channels, got {x.shape[1]}")
        if x.shape[2] % spec.spatial_divisor or x.shape[3] % spec.spatial_divisor:
            raise ValueError(
                f"spatial dims {x.shape[2:]} must divide by {spec.spatial_divisor} (levels={spec.levels})"
            )
        skips = []
        h = x
        for l in range(spec.levels):
            h = self._block(f"enc{l}a", h, 1 if l == 0 else 2)
            h = self._block(f"enc{l}b", h)
            skips.append(h)
        for l in range(spec.levels - 1, 0, -1):
            h = ag.upsample2(h)
            h = ag.concat_ch([h, skips[l - 1]])
            h = self._block(f"dec{l}a", h)
            h = self._block(f"dec{l}b", h)
        h = ag.concat_ch([h, x])
        res = self._conv("head_img", h)
        feat = self._conv("head_feat", h) if spec.feature_channels else None
        return res, feat

    def __call__(self, x):
        return self.forward(x)

    def num_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def state_arrays(self):
        return {k: p.data for k, p in self.params.items()}

    def load_arrays(self, arrays):
        for k, p in self.params.items():
            a = np.asarray(arrays[k])
            if a.shape != p.data.shape:
                raise ValueError(f"checkpoint shape mismatch for {k}: {a.shape} vs {p.data.shape}")
            p.data = a.astype(p.data.dtype, copy=True)

    def set_requires_grad(self, flag: bool):
        for p in self.params.values():
            p.requires_grad = flag
