"""Segmentation backbones with pluggable conditioning-layer placement.

Two architectures: a plain encoder-decoder conditioned once at the
bottleneck, and a U-Net with skip connections conditioned at every decoder
stage (one auxiliary network per stage).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .tensor import ShapeError, Tensor, concat, conv2d, maxpool2, upsample2

CONDITIONING_CHOICES = ("baseline", "none") + L.LAYER_KINDS


@dataclass
class BackboneConfig:
    kind: str = "encoder-decoder"        # or "unet"
    base_channels: int = 16
    depth: int = 3                       # 4 for the unet
    num_classes: int = 2
    conditioning: str = "baseline"
    input_size: tuple = (64, 64)
    in_channels: int = 3
    z_dim: int = 4

    def __post_init__(self):
        h, w = self.input_size
        if h % (1 << self.depth) or w % (1 << self.depth):
            raise ValueError(
                f"input size {self.input_size} not divisible by 2^{self.depth}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.conditioning not in CONDITIONING_CHOICES:
            raise ValueError(f"unknown conditioning method: {self.conditioning!r}")
        if self.kind not in ("encoder-decoder", "unet"):
            raise ValueError(f"unknown backbone kind: {self.kind!r}")


def _kaiming_conv(rng, c_out, c_in, k, dtype):
    bound = np.sqrt(6.0 / (c_in * k * k))
    return rng.uniform(-bound, bound, size=(c_out, c_in, k, k)).astype(dtype)


def _instance_standardize(F, eps=1e-5):
    """Parameter-free per-map standardization (the baseline's 'plain norm')."""
    mu = F.mean(axis=(2, 3), keepdims=True)
    var = (F - mu).square().mean(axis=(2, 3), keepdims=True)
    return (F - mu) / var.clamp_min(eps * eps).sqrt()


class _Model:
    """Common weight bookkeeping for both backbones."""

    def __init__(self, config):
        self.config = config
        self.weights = {}
        self.hypernets = []

    def _conv(self, rng, name, c_in, c_out, k, dtype):
        self.weights[name + "/w"] = Tensor(
            _kaiming_conv(rng, c_out, c_in, k, dtype), requires_grad=True)
        self.weights[name + "/b"] = Tensor(
            np.zeros(c_out, dtype=dtype), requires_grad=True)

    def _apply_conv(self, name, x):
        return conv2d(x, self.weights[name + "/w"], self.weights[name + "/b"])

    def _add_hypernet(self, c, H, W, rng, dtype, prefix):
        cfg = self.config
        if cfg.conditioning in ("baseline", "none"):
            self.hypernets.append(None)
            return
        net = L.Hypernet(cfg.conditioning, cfg.z_dim, c, H=H, W=W, rng=rng,
                         dtype=dtype, prefix=prefix)
        self.hypernets.append(net)
        self.weights.update(net.weights)

    def parameters(self):
        return self.weights

    def num_parameters(self):
        return sum(t.size for t in self.weights.values())

    def state_arrays(self):
        return {k: t.data.copy() for k, t in self.weights.items()}

    def load_state(self, arrays):
        for name, t in self.weights.items():
            arr = np.asarray(arrays[name], dtype=t.data.dtype)
            if arr.shape != t.shape:
                raise ShapeError(
                    f"checkpoint tensor {name} has shape {arr.shape}, "
                    f"expected {t.shape}")
            t.data = arr.copy()

    def _check_input(self, image):
        cfg = self.config
        if image.shape[-2:] != tuple(cfg.input_size):
            raise ShapeError(
                f"input size {image.shape[-2:]} does not match configured "
                f"{tuple(cfg.input_size)}")
        if image.ndim == 3:
            image = image.reshape((1,) + image.shape)
        if image.shape[1] != cfg.in_channels:
            raise ShapeError(
                f"expected {cfg.in_channels} input channels, got {image.shape[1]}")
        return image


class EncoderDecoder(_Model):
    """Fully-convolutional encoder-decoder; conditioning sits at the bottleneck
    (after the bottleneck convolution's activation)."""

    def __init__(self, config, seed=0, dtype=np.float32):
        super().__init__(config)
        cfg = config
        rng = np.random.default_rng(seed)
        base, depth = cfg.base_channels, cfg.depth
        enc = [base << i for i in range(depth)]            # e.g. 16, 32, 64
        self.bottleneck_channels = base << depth           # e.g. 128
        c_in = cfg.in_channels
        for i, c_out in enumerate(enc):
            self._conv(rng, f"enc{i}", c_in, c_out, 3, dtype)
            c_in = c_out
        self._conv(rng, "bottleneck", enc[-1], self.bottleneck_channels, 3, dtype)
        hb, wb = cfg.input_size[0] >> depth, cfg.input_size[1] >> depth
        self.bottleneck_size = (hb, wb)
        self._add_hypernet(self.bottleneck_channels, hb, wb, rng, dtype, "hyper0")
        c_in = self.bottleneck_channels
        for i in range(depth):
            self._conv(rng, f"dec{i}", c_in, c_in // 2, 3, dtype)
            c_in //= 2
        self._conv(rng, "head", c_in, cfg.num_classes, 1, dtype)

    def forward(self, image, z):
        """Returns (logits [N, num_classes, H, W], sigma_raw tensors)."""
        cfg = self.config
        x = self._check_input(image)
        for i in range(cfg.depth):
            x = maxpool2(self._apply_conv(f"enc{i}", x).relu())
        x = self._apply_conv("bottleneck", x).relu()
        sigmas = []
        net = self.hypernets[0]
        if net is not None:
            params = net.forward(z)
            x, sigmas = L.conditioning_forward(cfg.conditioning, x, params)
        for i in range(cfg.depth):
            x = self._apply_conv(f"dec{i}", upsample2(x)).relu()
        return self._apply_conv("head", x), sigmas


class UNet(_Model):
    """U-Net with two convolutions per block; a conditioning layer (or the
    baseline's plain normalization) sits between the two decoder convolutions
    of every stage."""

    def __init__(self, config, seed=0, dtype=np.float32):
        super().__init__(config)
        cfg = config
        rng = np.random.default_rng(seed)
        base, depth = cfg.base_channels, cfg.depth
        chans = [base << i for i in range(depth + 1)]      # encoder + bottom
        c_in = cfg.in_channels
        for i, c in enumerate(chans[:-1]):
            self._conv(rng, f"enc{i}a", c_in, c, 3, dtype)
            self._conv(rng, f"enc{i}b", c, c, 3, dtype)
            c_in = c
        self._conv(rng, "bota", chans[-2], chans[-1], 3, dtype)
        self._conv(rng, "botb", chans[-1], chans[-1], 3, dtype)
        h, w = cfg.input_size
        self.bottom_size = (h >> depth, w >> depth)
        for i in range(depth):
            cur = chans[depth - i]       # channels arriving at this stage
            out = chans[depth - i - 1]   # channels after it
            stage_h, stage_w = h >> (depth - i - 1), w >> (depth - i - 1)
            self._conv(rng, f"dec{i}a", cur, out, 3, dtype)
            self._add_hypernet(out, stage_h, stage_w, rng, dtype, f"hyper{i}")
            self._conv(rng, f"dec{i}b", 2 * out, out, 3, dtype)
        self._conv(rng, "head", chans[0], cfg.num_classes, 1, dtype)

    def forward(self, image, z):
        cfg = self.config
        x = self._check_input(image)
        skips = []
        for i in range(cfg.depth):
            x = self._apply_conv(f"enc{i}b", self._apply_conv(f"enc{i}a", x).relu()).relu()
            skips.append(x)
            x = maxpool2(x)
        x = self._apply_conv("botb", self._apply_conv("bota", x).relu()).relu()
        sigmas = []
        for i in range(cfg.depth):
            x = self._apply_conv(f"dec{i}a", upsample2(x)).relu()
            net = self.hypernets[i]
            if net is not None:
                params = net.forward(z)
                x, s = L.conditioning_forward(cfg.conditioning, x, params)
                sigmas.extend(s)
            elif cfg.conditioning == "baseline":
                x = _instance_standardize(x)
            # skip concatenation doubles the channels entering the second conv
            x = self._apply_conv(f"dec{i}b", concat([x, skips[cfg.depth - i - 1]], axis=1)).relu()
        return self._apply_conv("head", x), sigmas


def build_model(config, seed=0, dtype=np.float32):
    cls = EncoderDecoder if config.kind == "encoder-decoder" else UNet
    return cls(config, seed=seed, dtype=dtype)
