"""Layer kinds: shape rules, parameter shapes, forward passes and gradients.

All arrays are float64 and C-ordered. Each forward returns the output plus a
context tuple holding exactly what the matching backward needs; backwards are
hand-written reverse-mode derivatives (no autodiff graph).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import ShapeError

KINDS = ("dense", "conv2d", "conv1d", "relu", "sigmoid", "flatten", "maxpool2d")


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a feed-forward network.

    Only the fields relevant to ``kind`` are set:
      dense     -> units
      conv2d    -> channels, kernel, stride, padding
      conv1d    -> channels, kernel, stride, padding
      maxpool2d -> pool, stride (defaults to pool)
      relu / sigmoid / flatten -> nothing
    """

    kind: str
    units: Optional[int] = None
    channels: Optional[int] = None
    kernel: Optional[int] = None
    stride: int = 1
    padding: int = 0
    pool: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "dense":
            if not self.units or self.units < 1:
                raise ShapeError("dense layer requires units >= 1")
        elif self.kind in ("conv2d", "conv1d"):
            if not self.channels or self.channels < 1:
                raise ShapeError(f"{self.kind} requires channels >= 1")
            if not self.kernel or self.kernel < 1:
                raise ShapeError(f"{self.kind} requires kernel >= 1")
            if self.stride < 1 or self.padding < 0:
                raise ShapeError(f"{self.kind} requires stride >= 1 and padding >= 0")
        elif self.kind == "maxpool2d":
            if not self.pool or self.pool < 1:
                raise ShapeError("maxpool2d requires pool >= 1")
            if self.stride < 1:
                raise ShapeError("maxpool2d requires stride >= 1")


def dense(units: int) -> LayerSpec:
    return LayerSpec("dense", units=units)


def conv2d(channels: int, kernel: int, stride: int = 1, padding: int = 0) -> LayerSpec:
    return LayerSpec("conv2d", channels=channels, kernel=kernel, stride=stride, padding=padding)


def conv1d(channels: int, kernel: int, stride: int = 1, padding: int = 0) -> LayerSpec:
    return LayerSpec("conv1d", channels=channels, kernel=kernel, stride=stride, padding=padding)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def sigmoid() -> LayerSpec:
    return LayerSpec("sigmoid")


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def maxpool2d(pool: int, stride: Optional[int] = None) -> LayerSpec:
    return LayerSpec("maxpool2d", pool=pool, stride=stride if stride is not None else pool)


def _conv_out_len(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1 or size + 2 * padding < kernel:
        raise ShapeError(
            f"kernel {kernel} (stride {stride}, padding {padding}) does not fit input extent {size}"
        )
    return out


def output_shape(layer: LayerSpec, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Sample shape (without the batch axis) produced by `layer` on `in_shape`."""
    if layer.kind == "dense":
        if len(in_shape) != 1:
            raise ShapeError(f"dense expects a flat input, got shape {in_shape}")
        return (layer.units,)
    if layer.kind == "conv2d":
        if len(in_shape) != 3:
            raise ShapeError(f"conv2d expects (C, H, W) input, got shape {in_shape}")
        _, h, w = in_shape
        oh = _conv_out_len(h, layer.kernel, layer.stride, layer.padding)
        ow = _conv_out_len(w, layer.kernel, layer.stride, layer.padding)
        return (layer.channels, oh, ow)
    if layer.kind == "conv1d":
        if len(in_shape) != 2:
            raise ShapeError(f"conv1d expects (C, L) input, got shape {in_shape}")
        _, length = in_shape
        ol = _conv_out_len(length, layer.kernel, layer.stride, layer.padding)
        return (layer.channels, ol)
    if layer.kind == "maxpool2d":
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool2d expects (C, H, W) input, got shape {in_shape}")
        c, h, w = in_shape
        oh = _conv_out_len(h, layer.pool, layer.stride, 0)
        ow = _conv_out_len(w, layer.pool, layer.stride, 0)
        return (c, oh, ow)
    if layer.kind == "flatten":
        return (int(np.prod(in_shape)),)
    # relu / sigmoid
    return in_shape


def param_shapes(layer: LayerSpec, in_shape: tuple[int, ...]) -> dict[str, tuple[int, ...]]:
    if layer.kind == "dense":
        return {"weight": (layer.units, in_shape[0]), "bias": (layer.units,)}
    if layer.kind == "conv2d":
        return {
            "weight": (layer.channels, in_shape[0], layer.kernel, layer.kernel),
            "bias": (layer.channels,),
        }
    if layer.kind == "conv1d":
        return {"weight": (layer.channels, in_shape[0], layer.kernel), "bias": (layer.channels,)}
    return {}


def glorot_bound(layer: LayerSpec, in_shape: tuple[int, ...]) -> float:
    """Uniform init bound sqrt(6 / (fan_in + fan_out)) for parameterized layers."""
    if layer.kind == "dense":
        fan_in, fan_out = in_shape[0], layer.units
    elif layer.kind == "conv2d":
        rf = layer.kernel * layer.kernel
        fan_in, fan_out = in_shape[0] * rf, layer.channels * rf
    elif layer.kind == "conv1d":
        fan_in, fan_out = in_shape[0] * layer.kernel, layer.channels * layer.kernel
    else:
        raise ShapeError(f"{layer.kind} has no parameters")
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


# ---------------------------------------------------------------------------
# convolution helpers: forward and weight gradients contract the strided
# window view directly; the input gradient is a full correlation of the
# (stride-dilated) output gradient with the flipped kernel
# ---------------------------------------------------------------------------

def _windows2d(x, kernel, stride, padding):
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    win = np.lib.stride_tricks.sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    return win[:, :, ::stride, ::stride]  # (B, C, OH, OW, k, k)


def _windows1d(x, kernel, stride, padding):
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else x
    win = np.lib.stride_tricks.sliding_window_view(xp, kernel, axis=2)
    return win[:, :, ::stride]  # (B, C, OL, k)


def _conv2d_input_grad(gy, w, x_shape, stride, padding):
    b, c, h, wd = x_shape
    oc, _, k, _ = w.shape
    oh, ow = gy.shape[2], gy.shape[3]
    gyd = gy
    if stride > 1:  # dilate: windows only touched every stride-th position
        gyd = np.zeros((b, oc, (oh - 1) * stride + 1, (ow - 1) * stride + 1))
        gyd[:, :, ::stride, ::stride] = gy
    win = _windows2d(gyd, k, 1, k - 1)  # full correlation range
    core = np.einsum("boijuv,ocuv->bcij", win, w[:, :, ::-1, ::-1], optimize=True)
    gxp = np.zeros((b, c, h + 2 * padding, wd + 2 * padding))
    gxp[:, :, : core.shape[2], : core.shape[3]] = core[:, :, : h + 2 * padding, : wd + 2 * padding]
    return gxp[:, :, padding : padding + h, padding : padding + wd] if padding else gxp


def _conv1d_input_grad(gy, w, x_shape, stride, padding):
    b, c, length = x_shape
    oc, _, k = w.shape
    ol = gy.shape[2]
    gyd = gy
    if stride > 1:
        gyd = np.zeros((b, oc, (ol - 1) * stride + 1))
        gyd[:, :, ::stride] = gy
    win = _windows1d(gyd, k, 1, k - 1)
    core = np.einsum("boiu,ocu->bci", win, w[:, :, ::-1], optimize=True)
    gxp = np.zeros((b, c, length + 2 * padding))
    gxp[:, :, : core.shape[2]] = core[:, :, : length + 2 * padding]
    return gxp[:, :, padding : padding + length] if padding else gxp


# ---------------------------------------------------------------------------
# forward / backward per kind
# ---------------------------------------------------------------------------

def forward_layer(layer: LayerSpec, params: dict, x: np.ndarray):
    """Apply one layer to a batch. Returns (output, context-for-backward)."""
    kind = layer.kind
    if kind == "dense":
        w, bias = params["weight"], params["bias"]
        return x @ w.T + bias, (x,)
    if kind == "conv2d":
        w, bias = params["weight"], params["bias"]
        win = _windows2d(x, layer.kernel, layer.stride, layer.padding)
        out = np.einsum("bcijuv,ocuv->boij", win, w, optimize=True)
        out += bias[None, :, None, None]
        return out, (x,)
    if kind == "conv1d":
        w, bias = params["weight"], params["bias"]
        win = _windows1d(x, layer.kernel, layer.stride, layer.padding)
        out = np.einsum("bciu,ocu->boi", win, w, optimize=True)
        out += bias[None, :, None]
        return out, (x,)
    if kind == "relu":
        return np.maximum(x, 0.0), (x > 0.0,)
    if kind == "sigmoid":
        # exp of a non-positive argument only, so no overflow for any input
        e = np.exp(-np.abs(x))
        y = np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
        return y, (y,)
    if kind == "flatten":
        return x.reshape(x.shape[0], -1), (x.shape,)
    if kind == "maxpool2d":
        b, c, h, w = x.shape
        p, s = layer.pool, layer.stride
        oh = (h - p) // s + 1
        ow = (w - p) // s + 1
        win = np.lib.stride_tricks.sliding_window_view(x, (p, p), axis=(2, 3))[:, :, ::s, ::s]
        flat = win.reshape(b, c, oh, ow, p * p)
        arg = np.argmax(flat, axis=-1)  # first max wins on ties
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        return out, (x.shape, arg, oh, ow)
    raise ShapeError(f"unknown layer kind {kind!r}")


def backward_layer(layer: LayerSpec, params: dict, ctx, gy: np.ndarray):
    """Gradients of one layer. Returns (param grads dict, input grad)."""
    kind = layer.kind
    if kind == "dense":
        (x,) = ctx
        w = params["weight"]
        return {"weight": gy.T @ x, "bias": gy.sum(axis=0)}, gy @ w
    if kind == "conv2d":
        (x,) = ctx
        w = params["weight"]
        win = _windows2d(x, layer.kernel, layer.stride, layer.padding)
        gw = np.einsum("boij,bcijuv->ocuv", gy, win, optimize=True)
        gb = gy.sum(axis=(0, 2, 3))
        gx = _conv2d_input_grad(gy, w, x.shape, layer.stride, layer.padding)
        return {"weight": gw, "bias": gb}, gx
    if kind == "conv1d":
        (x,) = ctx
        w = params["weight"]
        win = _windows1d(x, layer.kernel, layer.stride, layer.padding)
        gw = np.einsum("boi,bciu->ocu", gy, win, optimize=True)
        gb = gy.sum(axis=(0, 2))
        gx = _conv1d_input_grad(gy, w, x.shape, layer.stride, layer.padding)
        return {"weight": gw, "bias": gb}, gx
    if kind == "relu":
        (mask,) = ctx
        return {}, gy * mask
    if kind == "sigmoid":
        (y,) = ctx
        return {}, gy * y * (1.0 - y)
    if kind == "flatten":
        (x_shape,) = ctx
        return {}, gy.reshape(x_shape)
    if kind == "maxpool2d":
        x_shape, arg, oh, ow = ctx
        b, c, h, w = x_shape
        p, s = layer.pool, layer.stride
        gx = np.zeros(x_shape)
        bi, ci, hi, wi = np.indices((b, c, oh, ow), sparse=False)
        rows = hi * s + arg // p
        cols_ = wi * s + arg % p
        np.add.at(gx, (bi, ci, rows, cols_), gy)
        return {}, gx
    raise ShapeError(f"unknown layer kind {kind!r}")
