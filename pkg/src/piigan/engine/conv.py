"""2-D convolution primitives.

Convolution, its input-adjoint and its weight-adjoint are three bilinear maps
whose derivatives are expressed through one another, which keeps the whole
family differentiable to any order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _result, add, flatten, matmul, reshape, transpose


def _pair(v, name: str) -> tuple[int, int]:
    if isinstance(v, int):
        v = (v, v)
    v = tuple(int(x) for x in v)
    if len(v) != 2 or min(v) < 1:
        raise ValueError(f"{name} must be a positive int or pair, got {v}")
    return v


@dataclass(frozen=True)
class ConvGeometry:
    in_hw: tuple[int, int]
    out_hw: tuple[int, int]
    kernel: tuple[int, int]
    stride: tuple[int, int]
    dilation: tuple[int, int]
    pads: tuple[int, int, int, int]  # top, bottom, left, right

    @property
    def padded_hw(self) -> tuple[int, int]:
        t, b, l, r = self.pads
        return self.in_hw[0] + t + b, self.in_hw[1] + l + r


def conv_geometry(in_hw, kernel, stride=1, dilation=1, padding: str = "same") -> ConvGeometry:
    """Output size and zero padding for a convolution.

    ``"same"`` gives ``ceil(in / stride)`` outputs with the surplus padding on
    the bottom/right; ``"valid"`` uses no padding.
    """
    stride = _pair(stride, "stride")
    dilation = _pair(dilation, "dilation")
    kernel = _pair(kernel, "kernel")
    out, pads = [], []
    for size, k, s, d in zip(in_hw, kernel, stride, dilation):
        eff = d * (k - 1) + 1
        if padding == "same":
            o = math.ceil(size / s)
            total = max((o - 1) * s + eff - size, 0)
            pads.append((total // 2, total - total // 2))
        elif padding == "valid":
            o = (size - eff) // s + 1 if size >= eff else 0
            pads.append((0, 0))
        else:
            raise ValueError(f"unknown padding mode {padding!r}")
        if o < 1:
            raise ValueError(f"convolution produces empty output for input {tuple(in_hw)} and kernel {kernel}")
        out.append(o)
    return ConvGeometry(
        tuple(in_hw), tuple(out), kernel, stride, dilation, (pads[0][0], pads[0][1], pads[1][0], pads[1][1])
    )


# -- numpy kernels ------------------------------------------------------------

def _padded_cnhw(x: np.ndarray, geo: ConvGeometry) -> np.ndarray:
    xt = x.transpose(1, 0, 2, 3)
    t, b, l, r = geo.pads
    if t or b or l or r:
        return np.pad(xt, ((0, 0), (0, 0), (t, b), (l, r)))
    return xt


def _tap(geo: ConvGeometry, i: int, j: int) -> tuple[slice, slice]:
    """Slices of the padded input read by kernel tap (i, j)."""
    (sh, sw), (dh, dw), (ho, wo) = geo.stride, geo.dilation, geo.out_hw
    return slice(i * dh, i * dh + sh * (ho - 1) + 1, sh), slice(j * dw, j * dw + sw * (wo - 1) + 1, sw)


def _im2col(x: np.ndarray, geo: ConvGeometry) -> np.ndarray:
    """Columns of shape (C * kH * kW, N * Ho * Wo)."""
    n, c = x.shape[:2]
    (kh, kw), (ho, wo) = geo.kernel, geo.out_hw
    xp = _padded_cnhw(x, geo)
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            rs, cs = _tap(geo, i, j)
            cols[:, i, j] = xp[:, :, rs, cs]
    return cols.reshape(c * kh * kw, n * ho * wo)


def _grad_matrix(g: np.ndarray) -> np.ndarray:
    """(N, Co, Ho, Wo) -> (Co, N * Ho * Wo)."""
    return g.transpose(1, 0, 2, 3).reshape(g.shape[1], -1)


def _conv_forward(x: np.ndarray, w: np.ndarray, geo: ConvGeometry, cols: np.ndarray | None = None) -> np.ndarray:
    n = x.shape[0]
    co = w.shape[0]
    ho, wo = geo.out_hw
    if cols is None:
        cols = _im2col(x, geo)
    y = w.reshape(co, -1) @ cols
    return np.ascontiguousarray(y.reshape(co, n, ho, wo).transpose(1, 0, 2, 3))


def _flipped_geometry(geo: ConvGeometry) -> ConvGeometry:
    """Geometry of the stride-1 input adjoint seen as a correlation of the output gradient."""
    (kh, kw), (dh, dw) = geo.kernel, geo.dilation
    t, b, l, r = geo.pads
    ph, pw = dh * (kh - 1), dw * (kw - 1)
    return ConvGeometry(geo.out_hw, geo.in_hw, geo.kernel, (1, 1), geo.dilation, (ph - t, ph - b, pw - l, pw - r))


def _conv_input_adjoint(g: np.ndarray, w: np.ndarray, geo: ConvGeometry) -> np.ndarray:
    if geo.stride == (1, 1) and min(_flipped_geometry(geo).pads) >= 0:
        # one GEMM against the flipped kernel instead of a tall GEMM plus kH*kW scatter-adds
        flipped = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        return _conv_forward(g, flipped, _flipped_geometry(geo))
    n, co, ho, wo = g.shape
    c = w.shape[1]
    kh, kw = geo.kernel
    dcols = (w.reshape(co, -1).T @ _grad_matrix(g)).reshape(c, kh, kw, n, ho, wo)
    hp, wp = geo.padded_hw
    out = np.zeros((c, n, hp, wp), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            rs, cs = _tap(geo, i, j)
            out[:, :, rs, cs] += dcols[:, i, j]
    t, _, l, _ = geo.pads
    h, w_ = geo.in_hw
    return np.ascontiguousarray(out[:, :, t : t + h, l : l + w_].transpose(1, 0, 2, 3))


def _conv_weight_adjoint(x: np.ndarray, g: np.ndarray, geo: ConvGeometry, cols: np.ndarray | None = None) -> np.ndarray:
    co = g.shape[1]
    c = x.shape[1]
    kh, kw = geo.kernel
    if cols is None:
        cols = _im2col(x, geo)
    return (_grad_matrix(g) @ cols.T).reshape(co, c, kh, kw)


# -- differentiable ops -------------------------------------------------------

def conv_raw(x: Tensor, w: Tensor, geo: ConvGeometry) -> Tensor:
    cols = _im2col(x.data, geo)
    # keep the columns for the weight gradient only when one is expected
    cached = cols if w.requires_grad else None

    def backward(g, needs):
        return (
            conv_input_adjoint(g, w, geo) if needs[0] else None,
            conv_weight_adjoint(x, g, geo, cached) if needs[1] else None,
        )

    return _result(_conv_forward(x.data, w.data, geo, cols), (x, w), backward, "conv")


def conv_input_adjoint(g: Tensor, w: Tensor, geo: ConvGeometry) -> Tensor:
    def backward(a, needs):
        return (
            conv_raw(a, w, geo) if needs[0] else None,
            conv_weight_adjoint(a, g, geo) if needs[1] else None,
        )

    return _result(_conv_input_adjoint(g.data, w.data, geo), (g, w), backward, "conv_input_adjoint")


def conv_weight_adjoint(x: Tensor, g: Tensor, geo: ConvGeometry, cols: np.ndarray | None = None) -> Tensor:
    def backward(a, needs):
        return (
            conv_input_adjoint(g, a, geo) if needs[0] else None,
            conv_raw(x, a, geo) if needs[1] else None,
        )

    return _result(_conv_weight_adjoint(x.data, g.data, geo, cols), (x, g), backward, "conv_weight_adjoint")


def _add_channel_bias(y: Tensor, bias: Tensor | None) -> Tensor:
    if bias is None:
        return y
    if bias.shape != (y.shape[1],):
        raise ValueError(f"bias shape {bias.shape} does not match {y.shape[1]} channels")
    return add(y, reshape(bias, (1, -1, 1, 1)))


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride=1,
    dilation=1,
    padding: str = "same",
) -> Tensor:
    """Cross-correlation of an (N, C, H, W) input with a (C_out, C, kH, kW) kernel."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, weight expects {weight.shape[1]}")
    geo = conv_geometry(x.shape[2:], weight.shape[2:], stride, dilation, padding)
    return _add_channel_bias(conv_raw(x, weight, geo), bias)


def conv2d_transpose(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=2) -> Tensor:
    """Upsampling by ``stride``: the adjoint of a "same" conv2d with this kernel.

    ``weight`` is laid out (C_in, C_out, kH, kW); the output is
    (N, C_out, H * stride, W * stride).
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d_transpose expects 4-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, weight expects {weight.shape[0]}")
    sh, sw = _pair(stride, "stride")
    geo = conv_geometry((x.shape[2] * sh, x.shape[3] * sw), weight.shape[2:], (sh, sw), 1, "same")
    if geo.out_hw != tuple(x.shape[2:]):
        raise ValueError(f"kernel {weight.shape[2:]} cannot upsample {x.shape[2:]} by {stride}")
    return _add_channel_bias(conv_input_adjoint(x, weight, geo), bias)


def conv2d_constant_planes(
    z: Tensor,
    weight: Tensor,
    in_hw,
    stride=1,
    dilation=1,
    padding: str = "same",
) -> Tensor:
    """conv2d of spatially constant planes, given only their (N, C) values.

    Equals conv2d(broadcast of z over ``in_hw``, weight) without bias, at the
    cost of a (N*C_out, kH*kW) @ (kH*kW, Ho*Wo) product. Zero padding makes
    border outputs see fewer taps, which the 0/1 tap-validity matrix encodes.
    """
    if z.ndim != 2 or weight.ndim != 4 or z.shape[1] != weight.shape[1]:
        raise ValueError(f"need (N, C) planes and a (C_out, C, kH, kW) kernel, got {z.shape} and {weight.shape}")
    geo = conv_geometry(in_hw, weight.shape[2:], stride, dilation, padding)
    n, c = z.shape
    co, taps = weight.shape[0], weight.shape[2] * weight.shape[3]
    valid = _im2col(np.ones((1, 1) + tuple(in_hw), dtype=weight.dtype), geo)
    per_tap = matmul(z, reshape(transpose(weight, (1, 0, 2, 3)), (c, co * taps)))
    out = matmul(reshape(per_tap, (n * co, taps)), Tensor(valid))
    return reshape(out, (n, co) + geo.out_hw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map of (N, D_in) rows by a (D_out, D_in) weight; 4-D input is flattened."""
    if x.ndim != 2:
        x = flatten(x)
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear expects {weight.shape[1]} input features, got {x.shape[1]}")
    y = matmul(x, transpose(weight))
    return y if bias is None else add(y, bias)
