from __future__ import annotations

"""
functional.py
─────────────
The operator set the architecture needs, all on BHWC tensors:

  conv2d / conv_transpose2d   3×3 or 1×1 kernels, zero padding or none
  normalize                   batch norm (running stats) and layer norm
  activation                  swish, gelu, sigmoid
  attention_local             multi-head self-attention over the Moore neighbourhood
  pointwise ops               add, hadamard, mse, l1_clip_norm, concat, split,
                              dropout, simple_gate, scale_cells, masked_update, hinge

Nothing here broadcasts implicitly: every op checks its shape contract and
raises ShapeError otherwise.
"""

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .errors import InvalidArgument, NormalizationError, ShapeError
from .tensor import Function, Tensor, count_flops

PaddingMode = Literal["zero", "none"]

# Moore neighbourhood offsets into a 1-cell zero-padded lattice, row-major.
_OFFSETS = tuple((di, dj) for di in range(3) for dj in range(3))
_GELU_C = math.sqrt(2.0 / math.pi)


# ──────────────────────────────────────────────────────────────────────────────
# Convolutions
# ──────────────────────────────────────────────────────────────────────────────

def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int, ho: int, wo: int) -> np.ndarray:
    """(B, H, W, C) -> (B·ho·wo, kh·kw·C) patch matrix, rows in (kh, kw, C) order."""
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    hs = stride * (ho - 1) + 1
    ws = stride * (wo - 1) + 1
    if kh == 1 and kw == 1:
        return x[:, :hs:stride, :ws:stride, :].reshape(-1, x.shape[3])
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    win = win[:, :hs:stride, :ws:stride]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(-1, kh * kw * x.shape[3])


def _col2im(cols: np.ndarray, padded_shape: tuple[int, int, int, int],
            kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of _im2col on an already padded lattice: scatter-add patches back."""
    B, hp, wp, C = padded_shape
    if kh == 1 and kw == 1 and stride == 1 and (hp, wp) == (ho, wo):
        return cols.reshape(padded_shape)
    patches = cols.reshape(B, ho, wo, kh, kw, C)
    out = np.zeros(padded_shape, dtype=cols.dtype)
    hs = stride * (ho - 1) + 1
    ws = stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + hs:stride, j:j + ws:stride, :] += patches[:, :, :, i, j, :]
    return out


def _crop(a: np.ndarray, pad: int, h: int, w: int) -> np.ndarray:
    if pad == 0 and a.shape[1:3] == (h, w):
        return a
    return np.ascontiguousarray(a[:, pad:pad + h, pad:pad + w, :])


def _padding_amount(kernel_size: int, padding: str) -> int:
    if padding == "zero":
        return kernel_size // 2
    if padding == "none":
        return 0
    raise InvalidArgument(f"unknown padding mode {padding!r}")


def _check_kernel(x: Tensor, kernel: Tensor, bias: Tensor | None, in_axis: int, out_axis: int) -> None:
    if x.ndim != 4:
        raise ShapeError(f"expected a BHWC tensor, got shape {x.shape}")
    if kernel.ndim != 4:
        raise ShapeError(f"expected a 4-D kernel, got shape {kernel.shape}")
    if kernel.shape[:2] not in ((1, 1), (3, 3)):
        raise ShapeError(f"kernel spatial extent must be 1x1 or 3x3, got {kernel.shape[:2]}")
    if kernel.shape[in_axis] != x.shape[3]:
        raise ShapeError(f"kernel expects {kernel.shape[in_axis]} input channels, tensor has {x.shape[3]}")
    if bias is not None and bias.shape != (kernel.shape[out_axis],):
        raise ShapeError(f"bias shape {bias.shape} does not match {kernel.shape[out_axis]} output channels")


class _Conv2d(Function):
    def forward(self, x: np.ndarray, w: np.ndarray, *bias: np.ndarray, stride: int, pad: int) -> np.ndarray:
        kh, kw, _, cout = w.shape
        B, H, W, C = x.shape
        ho = (H + 2 * pad - kh) // stride + 1
        wo = (W + 2 * pad - kw) // stride + 1
        cols = _im2col(x, kh, kw, stride, pad, ho, wo)
        out = cols @ w.reshape(-1, cout)
        if bias:
            out += bias[0]
        count_flops(2 * cols.shape[0] * cols.shape[1] * cout)
        self.geometry = (x.shape, stride, pad, ho, wo)
        self.w = w
        if self.wants(1):
            self.save(cols=cols)
        return out.reshape(B, ho, wo, cout)

    def backward(self, grad: np.ndarray) -> list[np.ndarray | None]:
        (B, H, W, C), stride, pad, ho, wo = self.geometry
        kh, kw, _, cout = self.w.shape
        g2 = grad.reshape(-1, cout)
        gx = gw = None
        if self.wants(0):
            dcols = g2 @ self.w.reshape(-1, cout).T
            gx = _crop(_col2im(dcols, (B, H + 2 * pad, W + 2 * pad, C), kh, kw, stride, ho, wo), pad, H, W)
        if self.wants(1):
            gw = (self.saved["cols"].T @ g2).reshape(self.w.shape)
        grads: list[np.ndarray | None] = [gx, gw]
        if len(self.inputs) == 3:
            grads.append(g2.sum(axis=0) if self.wants(2) else None)
        return grads


class _ConvTranspose2d(Function):
    def forward(self, y: np.ndarray, w: np.ndarray, *bias: np.ndarray,
                stride: int, pad: int, out_hw: tuple[int, int]) -> np.ndarray:
        kh, kw, cx, cy = w.shape
        B, hy, wy, _ = y.shape
        hx, wx = out_hw
        cols = y.reshape(-1, cy) @ w.reshape(-1, cy).T
        out = _crop(_col2im(cols, (B, hx + 2 * pad, wx + 2 * pad, cx), kh, kw, stride, hy, wy), pad, hx, wx)
        if bias:
            out = out + bias[0]
        count_flops(2 * cols.shape[0] * cols.shape[1] * cy)
        self.geometry = (y.shape, stride, pad)
        self.w = w
        self.y = y
        return out

    def backward(self, grad: np.ndarray) -> list[np.ndarray | None]:
        (B, hy, wy, cy), stride, pad = self.geometry
        kh, kw, _, _ = self.w.shape
        cols = _im2col(grad, kh, kw, stride, pad, hy, wy)
        gy = (cols @ self.w.reshape(-1, cy)).reshape(B, hy, wy, cy) if self.wants(0) else None
        gw = (cols.T @ self.y.reshape(-1, cy)).reshape(self.w.shape) if self.wants(1) else None
        grads: list[np.ndarray | None] = [gy, gw]
        if len(self.inputs) == 3:
            grads.append(grad.sum(axis=(0, 1, 2)) if self.wants(2) else None)
        return grads


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: PaddingMode = "zero") -> Tensor:
    """Cross-correlation of a BHWC tensor with a (Kh, Kw, Cin, Cout) kernel."""
    if stride < 1:
        raise InvalidArgument(f"stride must be >= 1, got {stride}")
    _check_kernel(x, kernel, bias, in_axis=2, out_axis=3)
    kh, kw = kernel.shape[:2]
    pad = _padding_amount(kh, padding)
    ho = (x.shape[1] + 2 * pad - kh) // stride + 1
    wo = (x.shape[2] + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"input {x.shape[1:3]} is too small for a {kh}x{kw} kernel")
    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _Conv2d.apply(*inputs, stride=stride, pad=pad)


def conv_transpose2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
                     stride: int = 1, padding: PaddingMode = "zero") -> Tensor:
    """
    Adjoint of conv2d with the same (Kh, Kw, Cout, Cin) kernel array.
    Output extent: H·stride with zero padding, (H-1)·stride + Kh without.
    """
    if stride not in (1, 2):
        raise InvalidArgument(f"transposed convolution supports stride 1 or 2, got {stride}")
    _check_kernel(x, kernel, bias, in_axis=3, out_axis=2)
    kh, kw = kernel.shape[:2]
    pad = _padding_amount(kh, padding)
    if padding == "zero":
        out_hw = (x.shape[1] * stride, x.shape[2] * stride)
    else:
        out_hw = ((x.shape[1] - 1) * stride + kh, (x.shape[2] - 1) * stride + kw)
    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _ConvTranspose2d.apply(*inputs, stride=stride, pad=pad, out_hw=out_hw)


# ──────────────────────────────────────────────────────────────────────────────
# Normalization
# ──────────────────────────────────────────────────────────────────────────────

@dataclass
class RunningStats:
    mean: np.ndarray | None = None
    var: np.ndarray | None = None
    momentum: float = 0.9

    @property
    def ready(self) -> bool:
        return self.mean is not None and self.var is not None

    def update(self, mean: np.ndarray, var: np.ndarray) -> None:
        if not self.ready:
            self.mean, self.var = mean.copy(), var.copy()
            return
        m = self.momentum
        self.mean = m * self.mean + (1.0 - m) * mean
        self.var = m * self.var + (1.0 - m) * var


class _Normalize(Function):
    def forward(self, x: np.ndarray, scale: np.ndarray, shift: np.ndarray, *,
                axes: tuple[int, ...], eps: float,
                fixed: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
        if fixed is None:
            mu = x.mean(axis=axes, keepdims=True)
            var = x.var(axis=axes, keepdims=True)
        else:
            mu, var = fixed
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu) * inv
        count_flops(6 * x.size)
        self.axes = axes
        self.fixed = fixed is not None
        self.scale = scale
        self.save(inv=np.asarray(inv))
        if self.wants(1) or (self.wants(0) and not self.fixed):
            self.save(xhat=xhat)
        return xhat * scale + shift

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        reduce_axes = tuple(range(grad.ndim - 1))
        gx = gs = gb = None
        if self.wants(0):
            dxhat = grad * self.scale
            inv = self.saved["inv"]
            if self.fixed:
                gx = dxhat * inv
            else:
                xhat = self.saved["xhat"]
                n = int(np.prod([grad.shape[a] for a in self.axes]))
                gx = (inv / n) * (n * dxhat
                                  - dxhat.sum(axis=self.axes, keepdims=True)
                                  - xhat * (dxhat * xhat).sum(axis=self.axes, keepdims=True))
        if self.wants(1):
            gs = (grad * self.saved["xhat"]).sum(axis=reduce_axes)
        if self.wants(2):
            gb = grad.sum(axis=reduce_axes)
        return gx, gs, gb


def normalize(x: Tensor, kind: Literal["batch", "layer"], scale: Tensor, shift: Tensor,
              mode: Literal["train", "eval"] = "train", stats: RunningStats | None = None,
              eps: float = 1e-5) -> Tensor:
    """
    batch: per-channel statistics over batch and lattice; train mode updates `stats`,
           eval mode reads them.
    layer: per-cell statistics over the channel axis; mode is irrelevant.
    """
    channels = x.shape[-1]
    if scale.shape != (channels,) or shift.shape != (channels,):
        raise ShapeError(f"scale/shift must have shape ({channels},)")
    if mode not in ("train", "eval"):
        raise InvalidArgument(f"unknown mode {mode!r}")
    if kind == "layer":
        return _Normalize.apply(x, scale, shift, axes=(x.ndim - 1,), eps=eps)
    if kind != "batch":
        raise InvalidArgument(f"unknown normalization kind {kind!r}")

    axes = tuple(range(x.ndim - 1))
    if mode == "eval":
        if stats is None or not stats.ready:
            raise NormalizationError("eval-mode batch norm needs running statistics from training")
        return _Normalize.apply(x, scale, shift, axes=axes, eps=eps,
                                fixed=(stats.mean.astype(x.dtype), stats.var.astype(x.dtype)))
    out = _Normalize.apply(x, scale, shift, axes=axes, eps=eps)
    if stats is not None:
        stats.update(x.data.mean(axis=axes), x.data.var(axis=axes))
    return out


# ──────────────────────────────────────────────────────────────────────────────
# Activations
# ──────────────────────────────────────────────────────────────────────────────

def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class _Activation(Function):
    def forward(self, x: np.ndarray, *, kind: str) -> np.ndarray:
        self.kind = kind
        self.x = x
        count_flops(4 * x.size)
        if kind == "sigmoid":
            return _sigmoid(x)
        if kind == "swish":
            return x * _sigmoid(x)
        return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x ** 3)))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        x = self.x
        if self.kind == "sigmoid":
            s = _sigmoid(x)
            return (grad * s * (1.0 - s),)
        if self.kind == "swish":
            s = _sigmoid(x)
            return (grad * (s + x * s * (1.0 - s)),)
        t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (grad * d,)


def activation(x: Tensor, kind: Literal["swish", "gelu", "sigmoid"]) -> Tensor:
    """Elementwise nonlinearity. GELU uses the tanh approximation."""
    if kind not in ("swish", "gelu", "sigmoid"):
        raise InvalidArgument(f"unknown activation {kind!r}")
    return _Activation.apply(x, kind=kind)


# ──────────────────────────────────────────────────────────────────────────────
# Localized self-attention
# ──────────────────────────────────────────────────────────────────────────────

@dataclass
class AttentionWeights:
    """1×1 projection kernels, each (1, 1, D, D)."""
    query: Tensor
    key: Tensor
    value: Tensor
    output: Tensor


def _neighbours(a: np.ndarray) -> np.ndarray:
    """(B, H, W, D) -> (B, H, W, 9, D): zero-padded Moore neighbourhood of every cell."""
    _, H, W, _ = a.shape
    p = np.pad(a, ((0, 0), (1, 1), (1, 1), (0, 0)))
    return np.stack([p[:, di:di + H, dj:dj + W] for di, dj in _OFFSETS], axis=3)


def _scatter_neighbours(dn: np.ndarray) -> np.ndarray:
    B, H, W, _, D = dn.shape
    p = np.zeros((B, H + 2, W + 2, D), dtype=dn.dtype)
    for n, (di, dj) in enumerate(_OFFSETS):
        p[:, di:di + H, dj:dj + W] += dn[:, :, :, n]
    return np.ascontiguousarray(p[:, 1:-1, 1:-1])


def _inside_lattice(H: int, W: int) -> np.ndarray:
    """(H, W, 9) flags: True where the neighbour exists inside the lattice."""
    inside = np.pad(np.ones((H, W), dtype=bool), 1)
    return np.stack([inside[di:di + H, dj:dj + W] for di, dj in _OFFSETS], axis=-1)


def _softmax_weights(q: np.ndarray, k: np.ndarray, heads: int) -> np.ndarray:
    B, H, W, D = q.shape
    dh = D // heads
    qh = q.reshape(B, H, W, heads, dh)
    kn = _neighbours(k).reshape(B, H, W, 9, heads, dh)
    scores = np.einsum("bxyhd,bxynhd->bxyhn", qh, kn) / math.sqrt(dh)
    scores = np.where(_inside_lattice(H, W)[None, :, :, None, :], scores, -np.inf)
    scores = scores - scores.max(axis=-1, keepdims=True)
    a = np.exp(scores)
    return a / a.sum(axis=-1, keepdims=True)


def neighborhood_weights(q: Tensor, k: Tensor, heads: int) -> np.ndarray:
    """Attention weights (B, H, W, heads, 9) each cell assigns to its Moore neighbours."""
    _check_heads(q.shape[-1], heads)
    return _softmax_weights(q.data, k.data, heads)


class _LocalAttention(Function):
    def forward(self, q: np.ndarray, k: np.ndarray, v: np.ndarray, *, heads: int) -> np.ndarray:
        B, H, W, D = q.shape
        dh = D // heads
        a = _softmax_weights(q, k, heads)
        vn = _neighbours(v).reshape(B, H, W, 9, heads, dh)
        out = np.einsum("bxyhn,bxynhd->bxyhd", a, vn).reshape(B, H, W, D)
        count_flops(4 * B * H * W * 9 * D)
        self.q, self.k, self.v, self.heads = q, k, v, heads
        self.save(attn=a)
        return out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        q, k, v, heads = self.q, self.k, self.v, self.heads
        B, H, W, D = q.shape
        dh = D // heads
        a = self.saved["attn"]
        gh = grad.reshape(B, H, W, heads, dh)
        vn = _neighbours(v).reshape(B, H, W, 9, heads, dh)
        da = np.einsum("bxyhd,bxynhd->bxyhn", gh, vn)
        ds = a * (da - (da * a).sum(axis=-1, keepdims=True))
        scale = 1.0 / math.sqrt(dh)
        gq = gk = gv = None
        if self.wants(0):
            kn = _neighbours(k).reshape(B, H, W, 9, heads, dh)
            gq = np.einsum("bxyhn,bxynhd->bxyhd", ds, kn).reshape(B, H, W, D) * scale
        if self.wants(1):
            qh = q.reshape(B, H, W, heads, dh)
            gk = _scatter_neighbours(np.einsum("bxyhn,bxyhd->bxynhd", ds, qh).reshape(B, H, W, 9, D) * scale)
        if self.wants(2):
            gv = _scatter_neighbours(np.einsum("bxyhn,bxyhd->bxynhd", a, gh).reshape(B, H, W, 9, D))
        return gq, gk, gv


def _check_heads(dim: int, heads: int) -> None:
    if heads < 1 or dim % heads:
        raise ShapeError(f"embedding dim {dim} is not divisible by {heads} heads")


def local_attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Per-cell softmax attention over the 3×3 neighbourhood; out-of-lattice neighbours are excluded."""
    if q.ndim != 4 or q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(f"query/key/value shapes differ: {q.shape}, {k.shape}, {v.shape}")
    _check_heads(q.shape[-1], heads)
    return _LocalAttention.apply(q, k, v, heads=heads)


def attention_local(state: Tensor, weights: AttentionWeights, heads: int) -> Tensor:
    _check_heads(state.shape[-1], heads)
    q = conv2d(state, weights.query)
    k = conv2d(state, weights.key)
    v = conv2d(state, weights.value)
    return conv2d(local_attention(q, k, v, heads), weights.output)


# ──────────────────────────────────────────────────────────────────────────────
# Pointwise suite
# ──────────────────────────────────────────────────────────────────────────────

def add(a: Tensor, b: Tensor) -> Tensor:
    return a + b


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    return a * b


class _MSE(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.shape != b.shape:
            raise ShapeError(f"mse: shape mismatch {a.shape} vs {b.shape}")
        diff = a - b
        self.save(diff=diff)
        count_flops(3 * a.size)
        return np.asarray((diff * diff).mean(), dtype=a.dtype)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, np.ndarray | None]:
        diff = self.saved["diff"]
        g = grad * diff * (2.0 / diff.size)
        return (g if self.wants(0) else None), (-g if self.wants(1) else None)


def mse(a: Tensor, b: Tensor) -> Tensor:
    return _MSE.apply(a, b)


class _L1ClipNorm(Function):
    def forward(self, x: np.ndarray, *, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        over = x - np.clip(x, lo, hi)
        self.save(sign=np.sign(over))
        return np.asarray(np.abs(over).mean(), dtype=x.dtype)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        sign = self.saved["sign"]
        return (grad * sign * (1.0 / sign.size),)


def l1_clip_norm(x: Tensor, lo: float | Sequence[float], hi: float | Sequence[float]) -> Tensor:
    """Mean |x - clip(x, lo, hi)|; lo/hi may be scalars or one bound per channel."""
    lo_arr = np.asarray(lo, dtype=x.dtype)
    hi_arr = np.asarray(hi, dtype=x.dtype)
    for bound in (lo_arr, hi_arr):
        if bound.ndim > 1 or (bound.ndim == 1 and bound.shape[0] != x.shape[-1]):
            raise ShapeError(f"clip bounds must be scalars or have {x.shape[-1]} entries")
    if np.any(lo_arr > hi_arr):
        raise InvalidArgument("clip lower bound exceeds upper bound")
    return _L1ClipNorm.apply(x, lo=lo_arr, hi=hi_arr)


class _Concat(Function):
    def forward(self, *arrays: np.ndarray, axis: int) -> np.ndarray:
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad: np.ndarray) -> list[np.ndarray | None]:
        cuts = np.cumsum(self.sizes)[:-1]
        parts = np.split(grad, cuts, axis=self.axis)
        return [np.ascontiguousarray(p) if self.wants(i) else None for i, p in enumerate(parts)]


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    axis = axis % ndim
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[d] != ref[d] for d in range(ndim) if d != axis):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape} along axis {axis}")
    return _Concat.apply(*tensors, axis=axis)


class _Narrow(Function):
    def forward(self, x: np.ndarray, *, axis: int, start: int, stop: int) -> np.ndarray:
        index = [slice(None)] * x.ndim
        index[axis] = slice(start, stop)
        self.index = tuple(index)
        self.shape = x.shape
        return x[self.index].copy()

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros(self.shape, dtype=grad.dtype)
        full[self.index] = grad
        return (full,)


def narrow(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    axis = axis % x.ndim
    if not 0 <= start < stop <= x.shape[axis]:
        raise ShapeError(f"narrow [{start}:{stop}] is out of range for extent {x.shape[axis]}")
    return _Narrow.apply(x, axis=axis, start=start, stop=stop)


def split(x: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    if sum(sizes) != x.shape[axis]:
        raise ShapeError(f"split sizes {list(sizes)} do not add up to {x.shape[axis]}")
    parts, start = [], 0
    for size in sizes:
        parts.append(narrow(x, axis, start, start + size))
        start += size
    return parts


def halves(x: Tensor) -> tuple[Tensor, Tensor]:
    """Split the channel axis into two equal halves."""
    channels = x.shape[-1]
    if channels % 2:
        raise ShapeError(f"cannot split an odd channel count ({channels}) in half")
    a, b = split(x, [channels // 2, channels // 2])
    return a, b


class _SimpleGate(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        c = x.shape[-1] // 2
        self.x = x
        count_flops(x.size // 2)
        return x[..., :c] * x[..., c:]

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        x = self.x
        c = x.shape[-1] // 2
        gx = np.empty_like(x)
        gx[..., :c] = grad * x[..., c:]
        gx[..., c:] = grad * x[..., :c]
        return (gx,)


def simple_gate(x: Tensor) -> Tensor:
    """Channel-split product: first half ∘ second half."""
    if x.shape[-1] % 2:
        raise ShapeError(f"simple gate needs an even channel count, got {x.shape[-1]}")
    return _SimpleGate.apply(x)


class _ScaleCells(Function):
    def forward(self, x: np.ndarray, c: np.ndarray) -> np.ndarray:
        self.x, self.c = x, c
        count_flops(x.size)
        return x * c

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, np.ndarray | None]:
        gx = grad * self.c if self.wants(0) else None
        gc = (grad * self.x).sum(axis=-1, keepdims=True) if self.wants(1) else None
        return gx, gc


def scale_cells(x: Tensor, c: Tensor) -> Tensor:
    """Hadamard product of x with a single-channel map repeated over x's channels."""
    if c.shape != x.shape[:-1] + (1,):
        raise ShapeError(f"cell map shape {c.shape} does not match {x.shape[:-1] + (1,)}")
    return _ScaleCells.apply(x, c)


class _ConstantMul(Function):
    def forward(self, x: np.ndarray, *, factor: np.ndarray) -> np.ndarray:
        self.save(factor=factor)
        return x * factor

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.saved["factor"],)


def dropout(x: Tensor, keep_prob: float = 0.9, train: bool = True,
            rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity in eval mode."""
    if not 0.0 < keep_prob <= 1.0:
        raise InvalidArgument(f"keep probability must lie in (0, 1], got {keep_prob}")
    if not train or keep_prob == 1.0:
        return x
    if rng is None:
        raise InvalidArgument("train-mode dropout needs an explicit random generator")
    factor = (rng.random(x.shape) < keep_prob).astype(x.dtype) / keep_prob
    return _ConstantMul.apply(x, factor=factor)


class _MaskedUpdate(Function):
    def forward(self, state: np.ndarray, delta: np.ndarray, *, mask: np.ndarray) -> np.ndarray:
        if state.shape != delta.shape:
            raise ShapeError(f"update shape {delta.shape} does not match state {state.shape}")
        m = mask[..., None]
        self.save(mask=m)
        return np.where(m, state + delta, state)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return grad, grad * self.saved["mask"]


def masked_update(state: Tensor, delta: Tensor, cell_mask: np.ndarray) -> Tensor:
    """state + delta where cell_mask is set; other cells are copied bit-exactly."""
    cell_mask = np.asarray(cell_mask, dtype=bool)
    if cell_mask.shape != state.shape[:-1]:
        raise ShapeError(f"cell mask shape {cell_mask.shape} does not match lattice {state.shape[:-1]}")
    return _MaskedUpdate.apply(state, delta, mask=cell_mask)


class _Hinge(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.x = x
        return np.maximum(x, 0)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * (self.x > 0),)


def hinge(x: Tensor) -> Tensor:
    """max(0, x)."""
    return _Hinge.apply(x)
