"""Layers, parameter bookkeeping, the Adam optimizer and checkpoint files.

Layers are thin wrappers over the autodiff ops: a bias-free 3x3 convolution,
an affine map, batch normalization with running statistics, and
complex-valued counterparts that treat real and imaginary parts as two real
tensors. Checkpoints store a named-parameter table as float32 records behind
a header that carries the configuration hash.
"""

import hashlib
import json
import struct

import numpy as np

from .autodiff import (
    Tensor,
    concat,
    constant,
    conv2d,
    div,
    fft2_imag_part,
    fft2_real_part,
    ifft2_imag_part,
    ifft2_real_part,
    leaky_relu,
    maxpool2x2,
    mul,
    reduce_mean,
    relu,
    sqrt,
)


class Parameter(Tensor):
    """Trainable tensor with a stable name for checkpointing."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name


class Module:
    """Base for parameterized components; walks attributes to find parameters."""

    def named_parameters(self) -> dict:
        out = {}
        self._collect("", out)
        return out

    def _collect(self, prefix: str, out: dict):
        for attr, value in vars(self).items():
            key = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                value.name = key
                out[key] = value
            elif isinstance(value, Module):
                value._collect(f"{key}.", out)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        item._collect(f"{key}.{i}.", out)
                    elif isinstance(item, Parameter):
                        item.name = f"{key}.{i}"
                        out[item.name] = item

    def param_count(self) -> int:
        return sum(p.data.size for p in self.named_parameters().values())

    def state_dict(self) -> dict:
        return {k: p.data.copy() for k, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict):
        params = self.named_parameters()
        for name, p in params.items():
            if name not in state:
                raise ValueError(f"checkpoint is missing parameter {name!r}")
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.data.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: checkpoint {value.shape}, "
                    f"model {p.data.shape}"
                )
            p.data = value.copy()
        extra = set(state) - set(params)
        if extra:
            raise ValueError(f"checkpoint has unknown parameters: {sorted(extra)}")


class Conv2d(Module):
    """Bias-free 3x3 convolution (cross-correlation) preserving H x W."""

    def __init__(self, in_channels: int, out_channels: int, rng):
        scale = np.sqrt(2.0 / (in_channels * 9))
        self.weight = Parameter(rng.standard_normal((out_channels, in_channels, 3, 3)) * scale)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight)


class Linear(Module):
    """Affine map (B, In) -> (B, Out)."""

    def __init__(self, in_features: int, out_features: int, rng):
        scale = np.sqrt(2.0 / in_features)
        self.weight = Parameter(rng.standard_normal((in_features, out_features)) * scale)
        self.bias = Parameter(np.zeros((1, out_features)))

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.shape[-1] != self.weight.data.shape[0]:
            raise ValueError(
                f"linear input width {x.data.shape[-1]} does not match weight "
                f"({self.weight.data.shape[0]} in)"
            )
        return (x @ self.weight) + self.bias


class BatchNorm2d(Module):
    """Per-channel normalization with learnable scale/shift and running stats.

    Training uses the batch statistics over (B, H, W); with batch 1 these are
    the per-sample spatial statistics. Evaluation uses running statistics
    updated with momentum 0.9. Epsilon 1e-5 inside the square root.
    """

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        self.scale = Parameter(np.ones((1, channels, 1, 1)))
        self.shift = Parameter(np.zeros((1, channels, 1, 1)))
        self.momentum = momentum
        self.eps = eps
        self.running_mean = np.zeros((1, channels, 1, 1))
        self.running_var = np.ones((1, channels, 1, 1))

    def __call__(self, x: Tensor, training: bool = True) -> Tensor:
        if training:
            mu = reduce_mean(x, axis=(0, 2, 3), keepdims=True)
            centered = x - mu
            var = reduce_mean(mul(centered, centered), axis=(0, 2, 3), keepdims=True)
            self.running_mean = (
                self.momentum * self.running_mean + (1 - self.momentum) * mu.data
            )
            self.running_var = (
                self.momentum * self.running_var + (1 - self.momentum) * var.data
            )
            xhat = div(centered, sqrt(var + constant(self.eps)))
        else:
            xhat = div(
                x - constant(self.running_mean),
                constant(np.sqrt(self.running_var + self.eps)),
            )
        return mul(xhat, self.scale) + self.shift


class ComplexTensor:
    """Pair of equally shaped real tensors standing in for a complex array."""

    __slots__ = ("re", "im")

    def __init__(self, re: Tensor, im: Tensor):
        if re.data.shape != im.data.shape:
            raise ValueError(
                f"real/imag shape mismatch: {re.data.shape} vs {im.data.shape}"
            )
        self.re = re
        self.im = im

    @property
    def shape(self):
        return self.re.data.shape

    @classmethod
    def from_complex(cls, data: np.ndarray) -> "ComplexTensor":
        data = np.asarray(data)
        return cls(Tensor(data.real.copy()), Tensor(data.imag.copy()))


class ComplexConv2d(Module):
    """Complex 3x3 convolution via (a+bi)(c+di) on two real weight stacks."""

    def __init__(self, in_channels: int, out_channels: int, rng):
        scale = np.sqrt(1.0 / (in_channels * 9))
        self.weight_re = Parameter(
            rng.standard_normal((out_channels, in_channels, 3, 3)) * scale
        )
        self.weight_im = Parameter(
            rng.standard_normal((out_channels, in_channels, 3, 3)) * scale
        )

    def __call__(self, z: ComplexTensor) -> ComplexTensor:
        rr = conv2d(z.re, self.weight_re)
        ii = conv2d(z.im, self.weight_im)
        ri = conv2d(z.re, self.weight_im)
        ir = conv2d(z.im, self.weight_re)
        return ComplexTensor(rr - ii, ri + ir)


class ComplexBatchNorm2d(Module):
    """Batch norm applied to the real and imaginary parts independently."""

    def __init__(self, channels: int):
        self.bn_re = BatchNorm2d(channels)
        self.bn_im = BatchNorm2d(channels)

    def __call__(self, z: ComplexTensor, training: bool = True) -> ComplexTensor:
        return ComplexTensor(self.bn_re(z.re, training), self.bn_im(z.im, training))


def complex_activation(z: ComplexTensor, mode: str) -> ComplexTensor:
    """Frequency-domain activation applied to real and imaginary parts independently."""
    fn = relu if mode == "relu" else leaky_relu
    if mode not in ("relu", "leaky_relu"):
        raise ValueError(f"unknown activation mode {mode!r}")
    return ComplexTensor(fn(z.re), fn(z.im))


def complex_maxpool2x2(z: ComplexTensor) -> ComplexTensor:
    return ComplexTensor(maxpool2x2(z.re), maxpool2x2(z.im))


def complex_fft2(z: ComplexTensor) -> ComplexTensor:
    re = fft2_real_part(z.re) - fft2_imag_part(z.im)
    im = fft2_imag_part(z.re) + fft2_real_part(z.im)
    return ComplexTensor(re, im)


def complex_ifft2(z: ComplexTensor) -> ComplexTensor:
    re = ifft2_real_part(z.re) - ifft2_imag_part(z.im)
    im = ifft2_imag_part(z.re) + ifft2_real_part(z.im)
    return ComplexTensor(re, im)


def real_to_complex_fft2(x: Tensor) -> ComplexTensor:
    """Forward DFT of a real spatial map, entering the frequency domain."""
    return ComplexTensor(fft2_real_part(x), fft2_imag_part(x))


def complex_flatten(z: ComplexTensor) -> Tensor:
    """Real and imaginary parts side by side as one (1, 2F) row."""
    return concat([z.re.reshape(1, -1), z.im.reshape(1, -1)], axis=1)


class Adam:
    """Adam with bias correction; deterministic given grads and step count."""

    def __init__(self, params: dict, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        for name, p in self.params.items():
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise ValueError(f"non-finite gradient for parameter {name!r}")
        self.t += 1
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self._m[name] = self.beta1 * self._m[name] + (1 - self.beta1) * g
            v = self._v[name] = self.beta2 * self._v[name] + (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1**self.t)
            v_hat = v / (1 - self.beta2**self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


CHECKPOINT_MAGIC = b"FQCK"
CHECKPOINT_VERSION = 1


def config_hash(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True).encode()
    ).hexdigest()[:16]


def save_checkpoint(path, state: dict, config: dict, tag: str = "") -> None:
    """Write named float32 parameter records behind a config-hash header."""
    cfg_json = json.dumps(config, sort_keys=True).encode()
    digest = config_hash(config).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        tag_b = tag.encode()
        f.write(struct.pack("<H", len(tag_b)))
        f.write(tag_b)
        f.write(struct.pack("<H", len(digest)))
        f.write(digest)
        f.write(struct.pack("<I", len(cfg_json)))
        f.write(cfg_json)
        f.write(struct.pack("<I", len(state)))
        for name in sorted(state):
            arr = np.ascontiguousarray(state[name], dtype="<f4")
            name_b = name.encode()
            f.write(struct.pack("<H", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path, expected_config: dict | None = None):
    """Read a checkpoint; returns (state dict, config dict, tag).

    Rejects a config-hash mismatch when ``expected_config`` is given.
    """
    with open(path, "rb") as f:
        raw = f.read()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(raw):
            raise ValueError(f"truncated checkpoint at byte {off}")
        chunk = raw[off : off + n]
        off += n
        return chunk

    if take(4) != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (tag_len,) = struct.unpack("<H", take(2))
    tag = take(tag_len).decode()
    (hash_len,) = struct.unpack("<H", take(2))
    digest = take(hash_len).decode()
    (cfg_len,) = struct.unpack("<I", take(4))
    config = json.loads(take(cfg_len).decode())
    if expected_config is not None and config_hash(expected_config) != digest:
        raise ValueError(
            "checkpoint config hash mismatch: "
            f"stored {digest}, expected {config_hash(expected_config)}"
        )
    (n_records,) = struct.unpack("<I", take(4))
    state = {}
    for _ in range(n_records):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(take(count * 4), dtype="<f4").reshape(shape)
        state[name] = arr.astype(np.float64)
    return state, config, tag
