"""Minimal reverse-mode autodiff over float64 numpy arrays.

Implements exactly the operation menu the frequency block and the attention
backbone need: broadcasting arithmetic, matmul, 3x3 convolution, 2x2 max
pooling, per-sample feature normalization, softmax cross entropy, and
real/imaginary DFT primitives so complex-valued layers can be composed from
real tensors. Every backward pass is validated against central finite
differences in the test suite via :func:`grad_check`.

Graph mechanics follow the usual tape pattern: each Tensor keeps its parents
and a closure that scatters the incoming gradient to them; ``backward`` on a
scalar walks the graph in reverse topological order.
"""

import numpy as np


class Tensor:
    """Array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self):
        """Reverse-mode sweep from a scalar output."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape)

    def t(self):
        return transpose2d(self)


def _wrap(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def constant(data) -> Tensor:
    """Detached tensor; gradients never flow into it."""
    return Tensor(data, requires_grad=False)


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the parent shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(data, parents, backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, parents=parents if req else (),
                  backward=backward if req else None)


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, -g)

    return _make(-a.data, (a,), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data / b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(out_data, (a, b), backward)


def power(a: Tensor, exponent: float) -> Tensor:
    out_data = a.data**exponent

    def backward(g):
        _accumulate(a, g * exponent * a.data ** (exponent - 1))

    return _make(out_data, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * out_data)

    return _make(out_data, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, g / a.data)

    return _make(np.log(a.data), (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def backward(g):
        _accumulate(a, g * 0.5 / out_data)

    return _make(out_data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        _accumulate(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        _accumulate(a, g * mask)

    return _make(a.data * mask, (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    mask = a.data > 0
    scale = np.where(mask, 1.0, slope)

    def backward(g):
        _accumulate(a, g * scale)

    return _make(a.data * scale, (a,), backward)


def activation(a: Tensor, mode: str) -> Tensor:
    """Elementwise nonlinearity: max(0, x) or the 0.01-slope leaky variant."""
    if mode == "relu":
        return relu(a)
    if mode == "leaky_relu":
        return leaky_relu(a)
    raise ValueError(f"unknown activation mode {mode!r}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(
            f"matmul expects 2D operands, got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make(out_data, (a, b), backward)


def reduce_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(gg, a.data.shape).copy())

    return _make(out_data, (a,), backward)


def reduce_mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        n = a.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.data.shape[i] for i in axis]))
    else:
        n = a.data.shape[axis]
    return mul(reduce_sum(a, axis, keepdims), constant(1.0 / n))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape

    def backward(g):
        _accumulate(a, g.reshape(old))

    return _make(a.data.reshape(shape), (a,), backward)


def transpose2d(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, g.T)

    return _make(a.data.T, (a,), backward)


def concat(tensors, axis=0) -> Tensor:
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(sl)])

    return _make(out_data, tuple(tensors), backward)


def conv2d(x: Tensor, weights: Tensor, stride: int = 1, pad: int = 1) -> Tensor:
    """Cross-correlation of (B, Cin, H, W) with (Cout, Cin, 3, 3), no bias.

    Zero padding of 1 at stride 1 preserves H x W. Kernel size is fixed at 3.
    """
    if x.data.ndim != 4:
        raise ValueError(f"conv2d expects (B, C, H, W) input, got {x.data.shape}")
    if weights.data.ndim != 4 or weights.data.shape[2:] != (3, 3):
        raise ValueError(f"conv2d expects (Cout, Cin, 3, 3) weights, got {weights.data.shape}")
    b, cin, h, w = x.data.shape
    cout, cin_w, kh, kw = weights.data.shape
    if cin != cin_w:
        raise ValueError(
            f"channel mismatch: input has {cin} channels, weights expect {cin_w}"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, cin * kh * kw)
    w_flat = weights.data.reshape(cout, -1)
    out_data = (cols @ w_flat.T).reshape(b, ho, wo, cout).transpose(0, 3, 1, 2)

    def backward(g):
        g_flat = g.transpose(0, 2, 3, 1).reshape(b * ho * wo, cout)
        if weights.requires_grad:
            _accumulate(weights, (g_flat.T @ cols).reshape(cout, cin, kh, kw))
        if x.requires_grad:
            d_cols = (g_flat @ w_flat).reshape(b, ho, wo, cin, kh, kw)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                        d_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            if pad:
                dxp = dxp[:, :, pad:-pad, pad:-pad]
            _accumulate(x, dxp)

    return _make(out_data, (x, weights), backward)


def maxpool2x2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 max; ties route the gradient to the lowest row-major index."""
    if x.data.ndim != 4:
        raise ValueError(f"maxpool2x2 expects (B, C, H, W), got {x.data.shape}")
    b, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2x2 needs even spatial dims, got ({h}, {w})")
    blocks = x.data.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = blocks.reshape(b, c, h // 2, w // 2, 4)
    arg = flat.argmax(axis=-1)  # first occurrence wins on ties
    out_data = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        d_flat = np.zeros_like(flat)
        np.put_along_axis(d_flat, arg[..., None], g[..., None], axis=-1)
        d = d_flat.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        _accumulate(x, d.reshape(b, c, h, w))

    return _make(out_data, (x,), backward)


def _row_select(a: Tensor, reducer) -> Tensor:
    """Per-row min/max of a (B, F) tensor as a selection, first occurrence wins."""
    idx = reducer(a.data, axis=1)
    rows = np.arange(a.data.shape[0])
    out_data = a.data[rows, idx][:, None]

    def backward(g):
        d = np.zeros_like(a.data)
        np.add.at(d, (rows, idx), g[:, 0])
        _accumulate(a, d)

    return _make(out_data, (a,), backward)


def row_min(a: Tensor) -> Tensor:
    return _row_select(a, np.argmin)


def row_max(a: Tensor) -> Tensor:
    return _row_select(a, np.argmax)


def normalize_feature(x: Tensor, mode: str) -> Tensor:
    """Per-sample feature normalization of a (B, F) tensor.

    minmax maps each row onto [0, 1] via its own extrema (constant rows go to
    zeros); zscore centers and divides by std + 1e-8; l2 divides by the row
    norm + 1e-8; none is the identity. Min/max are differentiated as
    selections, so gradients are exact away from ties.
    """
    if x.data.ndim != 2:
        raise ValueError(f"normalize_feature expects (B, F), got {x.data.shape}")
    if not np.isfinite(x.data).all():
        raise ValueError("non-finite values in normalization input")
    if mode == "none":
        return x
    if mode == "minmax":
        mn = row_min(x)
        mx = row_max(x)
        degenerate = mx.data == mn.data
        # degenerate rows: force denominator 1 and zero the output
        guard = constant(np.where(degenerate, 1.0, 0.0))
        keep = constant(np.where(degenerate, 0.0, 1.0))
        return mul(div(x - mn, (mx - mn) + guard), keep)
    if mode == "zscore":
        mu = reduce_mean(x, axis=1, keepdims=True)
        centered = x - mu
        var = reduce_mean(mul(centered, centered), axis=1, keepdims=True)
        std = sqrt(var + constant(1e-16))
        return div(centered, std + constant(1e-8))
    if mode == "l2":
        norm = sqrt(reduce_sum(mul(x, x), axis=1, keepdims=True) + constant(1e-16))
        return div(x, norm + constant(1e-8))
    raise ValueError(f"unknown normalization mode {mode!r}")


def softmax(a: Tensor, axis: int = 0) -> Tensor:
    """Softmax along one axis, stabilized by a detached max shift."""
    shift = constant(a.data.max(axis=axis, keepdims=True))
    e = exp(a - shift)
    return div(e, reduce_sum(e, axis=axis, keepdims=True))


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Softmax negative log-likelihood of one sample, logits shaped (1, K)."""
    if logits.data.ndim != 2 or logits.data.shape[0] != 1:
        raise ValueError(f"cross_entropy expects (1, K) logits, got {logits.data.shape}")
    k = logits.data.shape[1]
    if not 0 <= label < k:
        raise ValueError(f"label {label} outside [0, {k})")
    shift = constant(logits.data.max())
    z = logits - shift
    lse = log(reduce_sum(exp(z)))
    onehot = np.zeros((1, k))
    onehot[0, label] = 1.0
    picked = reduce_sum(mul(z, constant(onehot)))
    return lse - picked


# --- DFT primitives over the last two axes of real tensors -----------------
#
# For the unnormalized forward DFT y = W x with W symmetric, the real-linear
# adjoint of x -> Re(Wx) is g -> Re(W g) and of x -> Im(Wx) is g -> Im(W g);
# the normalized inverse follows the same pattern with W replaced by its
# scaled conjugate. Complex layers compose these four primitives.


def fft2_real_part(x: Tensor) -> Tensor:
    out_data = np.fft.fft2(x.data, axes=(-2, -1)).real

    def backward(g):
        _accumulate(x, np.fft.fft2(g, axes=(-2, -1)).real)

    return _make(out_data, (x,), backward)


def fft2_imag_part(x: Tensor) -> Tensor:
    out_data = np.fft.fft2(x.data, axes=(-2, -1)).imag

    def backward(g):
        _accumulate(x, np.fft.fft2(g, axes=(-2, -1)).imag)

    return _make(out_data, (x,), backward)


def ifft2_real_part(x: Tensor) -> Tensor:
    out_data = np.fft.ifft2(x.data, axes=(-2, -1)).real

    def backward(g):
        _accumulate(x, np.fft.ifft2(g, axes=(-2, -1)).real)

    return _make(out_data, (x,), backward)


def ifft2_imag_part(x: Tensor) -> Tensor:
    out_data = np.fft.ifft2(x.data, axes=(-2, -1)).imag

    def backward(g):
        _accumulate(x, np.fft.ifft2(g, axes=(-2, -1)).imag)

    return _make(out_data, (x,), backward)


def grad_check(fn, x: Tensor, step: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central finite differences.

    ``fn`` must map ``x`` to a scalar Tensor and rebuild its graph on every
    call. The caller is responsible for avoiding tie/kink points.
    """
    out = fn(x)
    for t in _walk(out):
        t.grad = None
    out.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    flat = x.data.ravel()
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = float(fn(x).data)
        flat[i] = orig - step
        f_minus = float(fn(x).data)
        flat[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * step)
        a = analytic.ravel()[i]
        rel = abs(numeric - a) / max(abs(numeric) + abs(a), 1e-2)
        worst = max(worst, rel)
    return worst


def _walk(root: Tensor):
    seen = set()
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        yield node
        stack.extend(node._parents)
