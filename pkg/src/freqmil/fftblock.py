"""The trainable frequency branch and its design variants.

The proposed block (design E) runs a stack of bias-free 3x3 convolutions
with ReLU and 2x2 max pooling over the packed magnitude/phase crop, rescales
the flattened feature with per-sample Min-Max normalization, and projects it
through a two-layer MLP into the fusion width. Designs A-D are the baseline
family that hops back to the spatial domain after every convolution; designs
F-I keep complex-valued layers and swap the normalization stage for inverse
transforms and batch norm placements:

    A  per-layer: complex conv -> iFFT -> batch norm -> ReLU -> pool -> FFT
    B  A with ReLU moved before the iFFT (applied to re/im independently)
    C  B with Leaky ReLU
    D  B plus batch norm in the frequency domain inside each layer
    E  proposed: real conv/ReLU/pool stack, Min-Max, MLP
    F  E with complex layers on the complex crop (no magnitude/phase split)
    G  F with an iFFT replacing Min-Max (no normalization at all)
    H  G with batch norm inside every layer (frequency domain)
    I  G with a single batch norm after the final iFFT (spatial domain)

Channel schedule: 4, 8, 16, ... doubling up to ``max_channels``, then flat.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, activation, maxpool2x2, normalize_feature, relu
from .nn import (
    BatchNorm2d,
    ComplexBatchNorm2d,
    ComplexConv2d,
    ComplexTensor,
    Conv2d,
    Linear,
    Module,
    complex_activation,
    complex_flatten,
    complex_ifft2,
    complex_maxpool2x2,
    real_to_complex_fft2,
)
from .spectral import FrequencyCrop, Spectrum

DESIGN_TAGS = "ABCDEFGHI"
VANILLA_DESIGNS = frozenset("ABCD")
COMPLEX_DESIGNS = frozenset("FGHI")


@dataclass
class FFTBlockConfig:
    """Construction knobs for any design variant.

    ``mlp_hidden`` of 0 resolves to 8 * max_channels so reduced-channel
    configurations shrink the MLP proportionally. ``normalize`` and
    ``batchnorm`` only apply to the real-input family (design E and the
    spatial-input adaptation used for wavelet crops).
    """

    design: str = "E"
    cnn_layers: int = 8
    max_channels: int = 32
    input_channels: int = 6
    crop_size: int = 256
    output_dim: int = 512
    mlp_hidden: int = 0
    normalize: str = "minmax"
    batchnorm: bool = False

    def resolved_hidden(self) -> int:
        return self.mlp_hidden if self.mlp_hidden > 0 else 8 * self.max_channels

    def validate(self):
        if self.design not in DESIGN_TAGS:
            raise ValueError(f"unknown design tag {self.design!r}, expected A..I")
        if self.cnn_layers < 1:
            raise ValueError("cnn_layers must be >= 1")
        minimum = 2**self.cnn_layers
        if self.crop_size < minimum or self.crop_size % minimum != 0:
            raise ValueError(
                f"crop size {self.crop_size} too small for {self.cnn_layers} pooling "
                f"layers; minimum legal size is {minimum}"
            )
        if self.normalize not in ("minmax", "zscore", "l2", "none"):
            raise ValueError(f"unknown normalization mode {self.normalize!r}")


@dataclass
class GlobalFrequencyFeature:
    """Width-D global feature produced by a frequency block."""

    vector: np.ndarray
    source_design: str


def channel_schedule(layers: int, max_channels: int) -> list[int]:
    return [min(4 * 2**i, max_channels) for i in range(layers)]


class _MlpHead(Module):
    """linear -> relu -> linear tail shared by every design."""

    def __init__(self, in_features: int, hidden: int, out_features: int, rng):
        self.fc1 = Linear(in_features, hidden, rng)
        self.fc2 = Linear(hidden, out_features, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(relu(self.fc1(x)))


class FrequencyBlock(Module):
    """Design E and its ablations: real CNN, per-sample normalization, MLP."""

    def __init__(self, cfg: FFTBlockConfig, rng):
        cfg.validate()
        self.cfg = cfg
        schedule = channel_schedule(cfg.cnn_layers, cfg.max_channels)
        chans = [cfg.input_channels] + schedule
        self.convs = [Conv2d(chans[i], chans[i + 1], rng) for i in range(cfg.cnn_layers)]
        self.bns = (
            [BatchNorm2d(c) for c in schedule] if cfg.batchnorm else []
        )
        side = cfg.crop_size // 2**cfg.cnn_layers
        self.mlp = _MlpHead(schedule[-1] * side * side, cfg.resolved_hidden(),
                            cfg.output_dim, rng)

    def forward(self, x: Tensor, training: bool = True) -> Tensor:
        cfg = self.cfg
        if x.data.shape[1] != cfg.input_channels:
            raise ValueError(
                f"expected {cfg.input_channels} input channels, got {x.data.shape[1]}"
            )
        if x.data.shape[2] != cfg.crop_size or x.data.shape[3] != cfg.crop_size:
            raise ValueError(
                f"expected {cfg.crop_size}x{cfg.crop_size} input, got "
                f"{x.data.shape[2]}x{x.data.shape[3]}"
            )
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if self.bns:
                x = self.bns[i](x, training)
            x = relu(x)
            x = maxpool2x2(x)
        flat = x.reshape(1, -1)
        flat = normalize_feature(flat, cfg.normalize)
        return self.mlp(flat)


class VanillaFrequencyBlock(Module):
    """Designs A-D: complex conv, per-layer round trip to the spatial domain."""

    def __init__(self, cfg: FFTBlockConfig, rng):
        cfg.validate()
        if cfg.design not in VANILLA_DESIGNS:
            raise ValueError(f"design {cfg.design!r} is not a vanilla variant")
        self.cfg = cfg
        schedule = channel_schedule(cfg.cnn_layers, cfg.max_channels)
        chans = [cfg.input_channels] + schedule
        self.convs = [
            ComplexConv2d(chans[i], chans[i + 1], rng) for i in range(cfg.cnn_layers)
        ]
        self.spatial_bns = [BatchNorm2d(c) for c in schedule]
        self.freq_bns = (
            [ComplexBatchNorm2d(c) for c in schedule] if cfg.design == "D" else []
        )
        side = cfg.crop_size // 2**cfg.cnn_layers
        self.mlp = _MlpHead(schedule[-1] * side * side, cfg.resolved_hidden(),
                            cfg.output_dim, rng)

    def forward(self, z: ComplexTensor, training: bool = True) -> Tensor:
        design = self.cfg.design
        s = None
        for i, conv in enumerate(self.convs):
            z = conv(z)
            if self.freq_bns:
                z = self.freq_bns[i](z, training)
            if design in ("B", "D"):
                z = complex_activation(z, "relu")
            elif design == "C":
                z = complex_activation(z, "leaky_relu")
            s = complex_ifft2(z).re
            s = self.spatial_bns[i](s, training)
            if design == "A":
                s = relu(s)
            s = maxpool2x2(s)
            if i < len(self.convs) - 1:
                z = real_to_complex_fft2(s)
        return self.mlp(s.reshape(1, -1))


class ComplexFrequencyBlock(Module):
    """Designs F-I: complex layers end to end, varying the normalization tail."""

    def __init__(self, cfg: FFTBlockConfig, rng):
        cfg.validate()
        if cfg.design not in COMPLEX_DESIGNS:
            raise ValueError(f"design {cfg.design!r} is not a complex variant")
        self.cfg = cfg
        schedule = channel_schedule(cfg.cnn_layers, cfg.max_channels)
        chans = [cfg.input_channels] + schedule
        self.convs = [
            ComplexConv2d(chans[i], chans[i + 1], rng) for i in range(cfg.cnn_layers)
        ]
        self.freq_bns = (
            [ComplexBatchNorm2d(c) for c in schedule] if cfg.design == "H" else []
        )
        self.tail_bn = BatchNorm2d(schedule[-1]) if cfg.design == "I" else None
        side = cfg.crop_size // 2**cfg.cnn_layers
        flat = schedule[-1] * side * side
        if cfg.design == "F":
            flat *= 2  # real and imaginary halves side by side
        self.mlp = _MlpHead(flat, cfg.resolved_hidden(), cfg.output_dim, rng)

    def forward(self, z: ComplexTensor, training: bool = True) -> Tensor:
        design = self.cfg.design
        for i, conv in enumerate(self.convs):
            z = conv(z)
            if self.freq_bns:
                z = self.freq_bns[i](z, training)
            z = complex_activation(z, "relu")
            z = complex_maxpool2x2(z)
        if design == "F":
            flat = normalize_feature(complex_flatten(z), "minmax")
            return self.mlp(flat)
        s = complex_ifft2(z).re
        if self.tail_bn is not None:
            s = self.tail_bn(s, training)
        return self.mlp(s.reshape(1, -1))


def build_design_variant(tag: str, cfg: FFTBlockConfig, rng) -> Module:
    """Construct the forward-callable block for one design row."""
    if tag not in DESIGN_TAGS:
        raise ValueError(f"unknown design tag {tag!r}, expected one of A..I")
    cfg.design = tag
    if tag in VANILLA_DESIGNS:
        return VanillaFrequencyBlock(cfg, rng)
    if tag == "E":
        return FrequencyBlock(cfg, rng)
    return ComplexFrequencyBlock(cfg, rng)


def uses_complex_input(tag: str) -> bool:
    return tag in VANILLA_DESIGNS or tag in COMPLEX_DESIGNS


def fft_block_forward(block: FrequencyBlock, crop: FrequencyCrop) -> GlobalFrequencyFeature:
    """Inference pass of the proposed block over a packed magnitude/phase crop."""
    out = block.forward(Tensor(crop.data[None, :, :, :]), training=False)
    return GlobalFrequencyFeature(out.data.ravel().copy(), block.cfg.design)


def fft_vanilla_forward(block: Module, crop: Spectrum) -> GlobalFrequencyFeature:
    """Inference pass of a complex-input design over the centered complex crop."""
    z = ComplexTensor.from_complex(crop.data[None, :, :, :])
    out = block.forward(z, training=False)
    return GlobalFrequencyFeature(out.data.ravel().copy(), block.cfg.design)
