# Copyright (C) fewseg developers 2024-2026

from __future__ import annotations

from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple, Union
from dataclasses import dataclass, replace
from fewseg.exceptions import ShapeError
from fewseg.tensor import Context, Function, Tensor

import numpy as np

if TYPE_CHECKING:
    from typing_extensions import Self


__all__ = (
    "Conv2dParams",
    "conv2d",
    "max_pool2d",
    "bilinear_resize",
    "resize_array",
    "interpolation_matrix",
    "relu",
    "add",
    "elementwise_mul",
    "concat_channels",
    "reshape",
    "tile",
    "softmax_channels",
    "global_avg_pool",
    "weighted_spatial_pool",
    "weighted_sum",
    "cross_entropy_spatial",
    "PROB_FLOOR",
)

PROB_FLOOR = 1e-7
"""Probabilities are clamped to ``[PROB_FLOOR, 1]`` before taking the log."""

Pair = Union[int, Tuple[int, int]]


def _pair(value: Pair) -> Tuple[int, int]:
    if isinstance(value, tuple):
        return value
    return (value, value)


@dataclass(frozen=True)
class Conv2dParams:
    """The parameters of a 2D convolution.

    Attributes
    ----------
    weight: :class:`Tensor`
        The kernel of shape ``[out_ch, in_ch, kh, kw]``. ``kh`` and ``kw`` are odd.
    bias: Optional[:class:`Tensor`]
        The bias of shape ``[out_ch]``.
    stride: :class:`int`
        The step between output samples.
    dilation: Union[:class:`int`, Tuple[:class:`int`, :class:`int`]]
        The spacing of kernel taps, per axis when a pair is given.
    padding: Union[:class:`int`, Tuple[:class:`int`, :class:`int`]]
        The amount of zero padding on each side, per axis when a pair is given.
    """

    weight: Tensor
    bias: Optional[Tensor] = None
    stride: int = 1
    dilation: Pair = 1
    padding: Pair = 0

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel_size(self) -> Tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]

    def with_dilation(self, dilation: Pair, padding: Pair) -> Self:
        return replace(self, dilation=dilation, padding=padding)


def conv_output_size(size: int, kernel: int, stride: int, dilation: int, padding: int) -> int:
    extent = (kernel - 1) * dilation + 1
    return (size + 2 * padding - extent) // stride + 1


def _tap(i: int, j: int, dh: int, dw: int, stride: int, out_h: int, out_w: int) -> Tuple[slice, slice, slice]:
    return (
        slice(None),
        slice(i * dh, i * dh + stride * (out_h - 1) + 1, stride),
        slice(j * dw, j * dw + stride * (out_w - 1) + 1, stride),
    )


class _Conv2d(Function):
    @staticmethod
    def forward(ctx: Context, x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None, *,
                stride: int, dilation: Tuple[int, int], padding: Tuple[int, int], out_hw: Tuple[int, int]) -> np.ndarray:
        dh, dw = dilation
        ph, pw = padding
        out_h, out_w = out_hw
        kh, kw = w.shape[2], w.shape[3]

        xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
        out = np.zeros((w.shape[0], out_h, out_w))
        for i in range(kh):
            for j in range(kw):
                out += np.tensordot(w[:, :, i, j], xp[_tap(i, j, dh, dw, stride, out_h, out_w)], axes=(1, 0))

        if b is not None:
            out += b[:, None, None]

        ctx.save(xp=xp, w=w, x_shape=x.shape, stride=stride, dilation=dilation, padding=padding, has_bias=b is not None)
        return out

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        xp, w = ctx.xp, ctx.w
        dh, dw = ctx.dilation
        ph, pw = ctx.padding
        _, height, width = ctx.x_shape
        out_h, out_w = grad.shape[1], grad.shape[2]
        kh, kw = w.shape[2], w.shape[3]

        grad_xp = np.zeros_like(xp)
        grad_w = np.zeros_like(w)
        for i in range(kh):
            for j in range(kw):
                tap = _tap(i, j, dh, dw, ctx.stride, out_h, out_w)
                grad_w[:, :, i, j] = np.tensordot(grad, xp[tap], axes=([1, 2], [1, 2]))
                grad_xp[tap] += np.tensordot(w[:, :, i, j], grad, axes=(0, 0))

        grad_x = grad_xp[:, ph:ph + height, pw:pw + width]
        if ctx.has_bias:
            return grad_x, grad_w, grad.sum(axis=(1, 2))
        return grad_x, grad_w


def conv2d(input: Tensor, params: Conv2dParams) -> Tensor:
    """Applies a zero-padded, strided, dilated 2D convolution.

    Parameters
    ----------
    input: :class:`Tensor`
        Feature map of shape ``[C, H, W]``.
    params: :class:`Conv2dParams`
        The kernel and geometry.

    Returns
    -------
    :class:`Tensor`
        Feature map of shape ``[C', H', W']`` where
        ``H' = floor((H + 2*pad - ((kh - 1)*dil + 1)) / stride) + 1``.

    Raises
    ------
    ShapeError
        The channel counts disagree or the output would be empty.
    """
    if len(input.shape) != 3:
        raise ShapeError("conv2d", "a [C, H, W] input", input.shape)

    channels, height, width = input.shape
    if channels != params.in_channels:
        raise ShapeError("conv2d", "%d input channels" % params.in_channels, channels)

    kh, kw = params.kernel_size
    dh, dw = _pair(params.dilation)
    ph, pw = _pair(params.padding)
    out_h = conv_output_size(height, kh, params.stride, dh, ph)
    out_w = conv_output_size(width, kw, params.stride, dw, pw)
    if out_h < 1 or out_w < 1:
        raise ShapeError("conv2d", "positive output dimensions", (out_h, out_w))

    options = dict(stride=params.stride, dilation=(dh, dw), padding=(ph, pw), out_hw=(out_h, out_w))
    if params.bias is None:
        return _Conv2d.apply(input, params.weight, **options)
    return _Conv2d.apply(input, params.weight, params.bias, **options)


class _MaxPool2d(Function):
    @staticmethod
    def forward(ctx: Context, x: np.ndarray, *, window: int, stride: int) -> np.ndarray:
        channels, height, width = x.shape
        out_h = (height - window) // stride + 1
        out_w = (width - window) // stride + 1

        best = np.full((channels, out_h, out_w), -np.inf)
        arg_i = np.zeros(best.shape, dtype=np.intp)
        arg_j = np.zeros(best.shape, dtype=np.intp)

        # Row-major scan with a strict comparison keeps the first maximum on ties.
        for i in range(window):
            for j in range(window):
                values = x[_tap(i, j, 1, 1, stride, out_h, out_w)]
                better = values > best
                best = np.where(better, values, best)
                arg_i = np.where(better, i, arg_i)
                arg_j = np.where(better, j, arg_j)

        ctx.save(shape=x.shape, arg_i=arg_i, arg_j=arg_j, stride=stride)
        return best

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        channels, out_h, out_w = grad.shape
        c, oh, ow = np.indices((channels, out_h, out_w))
        rows = oh * ctx.stride + ctx.arg_i
        cols = ow * ctx.stride + ctx.arg_j

        grad_x = np.zeros(ctx.shape)
        np.add.at(grad_x, (c, rows, cols), grad)
        return grad_x


def max_pool2d(input: Tensor, window: int, stride: int) -> Tensor:
    """Takes the maximum over square windows without padding.

    Gradient is routed to the first maximal cell of each window in
    row-major order.

    Raises
    ------
    ShapeError
        The window is larger than a spatial dimension.
    """
    if len(input.shape) != 3:
        raise ShapeError("max_pool2d", "a [C, H, W] input", input.shape)
    if window > input.shape[1] or window > input.shape[2]:
        raise ShapeError("max_pool2d", "spatial dims of at least %d" % window, input.shape[1:])

    return _MaxPool2d.apply(input, window=window, stride=stride)


def interpolation_matrix(size_in: int, size_out: int) -> np.ndarray:
    """The ``[size_out, size_in]`` corner-aligned linear interpolation matrix.

    Output sample ``i`` sits at input coordinate ``i * (size_in - 1) / (size_out - 1)``
    so both endpoints map onto endpoints. A single output sample reads input 0.
    """
    matrix = np.zeros((size_out, size_in))
    if size_in == 1 or size_out == 1:
        matrix[:, 0] = 1.0
        return matrix

    scale = (size_in - 1) / (size_out - 1)
    for i in range(size_out):
        position = i * scale
        low = min(int(np.floor(position)), size_in - 2)
        frac = position - low
        matrix[i, low] += 1.0 - frac
        matrix[i, low + 1] += frac
    return matrix


def resize_array(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinearly resizes a ``[H, W]`` or ``[C, H, W]`` array with corner alignment.

    This is the array-level counterpart of :func:`bilinear_resize`, used for
    masks that never need gradient.
    """
    height, width = values.shape[-2], values.shape[-1]
    if (height, width) == (out_h, out_w):
        return np.array(values, dtype=np.float64, copy=True)

    rows = interpolation_matrix(height, out_h)
    cols = interpolation_matrix(width, out_w)
    return np.matmul(np.matmul(rows, values.astype(np.float64)), cols.T)


class _BilinearResize(Function):
    @staticmethod
    def forward(ctx: Context, x: np.ndarray, *, out_h: int, out_w: int) -> np.ndarray:
        rows = interpolation_matrix(x.shape[1], out_h)
        cols = interpolation_matrix(x.shape[2], out_w)
        ctx.save(rows=rows, cols=cols)
        return np.matmul(np.matmul(rows, x), cols.T)

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        return np.matmul(np.matmul(ctx.rows.T, grad), ctx.cols)


class _Identity(Function):
    @staticmethod
    def forward(ctx: Context, x: np.ndarray) -> np.ndarray:
        return x.copy()

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        return grad


def bilinear_resize(input: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resizes a ``[C, H, W]`` tensor with corner-aligned bilinear interpolation.

    Resizing to the same size returns a bit-identical copy.

    Raises
    ------
    ShapeError
        The target size is not positive or the input is not 3D.
    """
    if len(input.shape) != 3:
        raise ShapeError("bilinear_resize", "a [C, H, W] input", input.shape)
    if out_h < 1 or out_w < 1:
        raise ShapeError("bilinear_resize", "a positive output size", (out_h, out_w))

    if input.shape[1:] == (out_h, out_w):
        return _Identity.apply(input)
    return _BilinearResize.apply(input, out_h=out_h, out_w=out_w)


class _Relu(Function):
    @staticmethod
    def forward(ctx: Context, x: np.ndarray) -> np.ndarray:
        positive = x > 0
        ctx.save(positive=positive)
        return np.where(positive, x, 0.0)

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        return np.where(ctx.positive, grad, 0.0)


def relu(input: Tensor) -> Tensor:
    return _Relu.apply(input)


class _Add(Function):
    @staticmethod
    def forward(ctx: Context, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a + b

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        return grad, grad


def add(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise sum of two tensors of identical shape."""
    if a.shape != b.shape:
        raise ShapeError("add", "shape %r" % (a.shape,), b.shape)
    return _Add.apply(a, b)


class _Mul(Function):
    @staticmethod
    def forward(ctx: Context, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        ctx.save(a=a, b=b)
        return a * b

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        return grad * ctx.b, grad * ctx.a


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise product of two tensors of identical shape."""
    if a.shape != b.shape:
        raise ShapeError("elementwise_mul", "shape %r" % (a.shape,), b.shape)
    return _Mul.apply(a, b)


class _Concat(Function):
    @staticmethod
    def forward(ctx: Context, *arrays: np.ndarray) -> np.ndarray:
        ctx.save(sizes=[array.shape[0] for array in arrays])
        return np.concatenate(arrays, axis=0)

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        bounds = np.cumsum(ctx.sizes)[:-1]
        return tuple(np.split(grad, bounds, axis=0))


def concat_channels(*tensors: Tensor) -> Tensor:
    """Concatenates tensors along the leading (channel) axis.

    Raises
    ------
    ShapeError
        The trailing dimensions differ.
    """
    if not tensors:
        raise ShapeError("concat_channels", "at least one tensor", 0)

    trailing = tensors[0].shape[1:]
    for tensor in tensors[1:]:
        if tensor.shape[1:] != trailing:
            raise ShapeError("concat_channels", "trailing dims %r" % (trailing,), tensor.shape[1:])
    return _Concat.apply(*tensors)


class _Reshape(Function):
    @staticmethod
    def forward(ctx: Context, x: np.ndarray, *, shape: Tuple[int, ...]) -> np.ndarray:
        ctx.save(shape=x.shape)
        return x.reshape(shape).copy()

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        return grad.reshape(ctx.shape)


def reshape(input: Tensor, *shape: int) -> Tensor:
    if int(np.prod(shape)) != input.data.size:
        raise ShapeError("reshape", "%d elements" % input.data.size, shape)
    return _Reshape.apply(input, shape=tuple(shape))


class _Tile(Function):
    @staticmethod
    def forward(ctx: Context, vector: np.ndarray, *, height: int, width: int) -> np.ndarray:
        return np.repeat(np.repeat(vector[:, None, None], height, axis=1), width, axis=2)

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        return grad.sum(axis=(1, 2))


def tile(vector: Tensor, height: int, width: int) -> Tensor:
    """Broadcasts a ``[D]`` vector to every location of a ``[D, height, width]`` map."""
    if len(vector.shape) != 1:
        raise ShapeError("tile", "a [D] vector", vector.shape)
    return _Tile.apply(vector, height=height, width=width)


class _Softmax(Function):
    @staticmethod
    def forward(ctx: Context, x: np.ndarray) -> np.ndarray:
        shifted = np.exp(x - x.max(axis=0, keepdims=True))
        probs = shifted / shifted.sum(axis=0, keepdims=True)
        ctx.save(probs=probs)
        return probs

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        probs = ctx.probs
        return probs * (grad - (grad * probs).sum(axis=0, keepdims=True))


def softmax_channels(input: Tensor) -> Tensor:
    """Softmax over the leading axis, computed with max subtraction.

    Works on ``[C, H, W]`` maps (per location) as well as ``[k]`` vectors.
    """
    if len(input.shape) < 1 or input.shape[0] < 1:
        raise ShapeError("softmax_channels", "at least one channel", input.shape)
    return _Softmax.apply(input)


class _GlobalAvgPool(Function):
    @staticmethod
    def forward(ctx: Context, x: np.ndarray) -> np.ndarray:
        ctx.save(shape=x.shape)
        return x.mean(axis=(1, 2))

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        _, height, width = ctx.shape
        return np.broadcast_to(grad[:, None, None] / (height * width), ctx.shape).copy()


def global_avg_pool(input: Tensor) -> Tensor:
    """Channel-wise mean of a ``[C, H, W]`` map, returning ``[C]``."""
    if len(input.shape) != 3:
        raise ShapeError("global_avg_pool", "a [C, H, W] input", input.shape)
    return _GlobalAvgPool.apply(input)


class _WeightedSpatialPool(Function):
    @staticmethod
    def forward(ctx: Context, x: np.ndarray, *, weights: np.ndarray) -> np.ndarray:
        total = weights.sum()
        ctx.save(weights=weights, total=total)
        return (x * weights[None]).sum(axis=(1, 2)) / total

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        return grad[:, None, None] * ctx.weights[None] / ctx.total


def weighted_spatial_pool(input: Tensor, weights: np.ndarray) -> Tensor:
    """Sum-pools ``input * weights`` over space and divides by the summed weight.

    ``weights`` is a constant ``[H, W]`` array; gradient flows to ``input`` only.
    """
    if len(input.shape) != 3 or weights.shape != input.shape[1:]:
        raise ShapeError("weighted_spatial_pool", "weights of shape %r" % (input.shape[1:],), weights.shape)
    return _WeightedSpatialPool.apply(input, weights=np.asarray(weights, dtype=np.float64))


class _WeightedSum(Function):
    @staticmethod
    def forward(ctx: Context, weights: np.ndarray, *features: np.ndarray) -> np.ndarray:
        ctx.save(weights=weights, features=features)
        out = np.zeros_like(features[0])
        for weight, feature in zip(weights, features):
            out += weight * feature
        return out

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        grad_weights = np.array([(grad * feature).sum() for feature in ctx.features])
        return (grad_weights,) + tuple(weight * grad for weight in ctx.weights)


def weighted_sum(features: Sequence[Tensor], weights: Tensor) -> Tensor:
    """Computes ``sum_i weights[i] * features[i]`` with gradient to both."""
    if weights.shape != (len(features),):
        raise ShapeError("weighted_sum", "%d weights" % len(features), weights.shape)
    for feature in features[1:]:
        if feature.shape != features[0].shape:
            raise ShapeError("weighted_sum", "shape %r" % (features[0].shape,), feature.shape)
    return _WeightedSum.apply(weights, *features)


class _CrossEntropySpatial(Function):
    @staticmethod
    def forward(ctx: Context, probs: np.ndarray, *, target: np.ndarray) -> np.ndarray:
        rows, cols = np.indices(target.shape)
        picked = probs[target, rows, cols]
        clamped = np.clip(picked, PROB_FLOOR, 1.0)
        ctx.save(shape=probs.shape, target=target, rows=rows, cols=cols, picked=picked, clamped=clamped)
        return np.array(-np.log(clamped).mean())

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        count = ctx.target.size
        grad_picked = np.where(ctx.picked >= PROB_FLOOR, -1.0 / (count * ctx.clamped), 0.0)

        grad_probs = np.zeros(ctx.shape)
        grad_probs[ctx.target, ctx.rows, ctx.cols] = grad * grad_picked
        return grad_probs


def cross_entropy_spatial(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean over locations of ``-log(pred[target])``.

    Parameters
    ----------
    pred: :class:`Tensor`
        Softmax-normalised probabilities of shape ``[C, h, w]``. When it is the
        output of :func:`softmax_channels` the gradient reaches the logits.
    target: :class:`numpy.ndarray`
        Integer class index per location, shape ``[h, w]``. A binary mask
        selects channel 1 (foreground) or 0 (background).

    Returns
    -------
    :class:`Tensor`
        A scalar tensor.

    Raises
    ------
    ShapeError
        The spatial sizes differ or a target index is out of range.
    """
    target = np.asarray(target)
    if len(pred.shape) != 3 or pred.shape[1:] != target.shape:
        raise ShapeError("cross_entropy_spatial", "target of shape %r" % (pred.shape[1:],), target.shape)
    if target.size and (target.min() < 0 or target.max() >= pred.shape[0]):
        raise ShapeError("cross_entropy_spatial", "class indices below %d" % pred.shape[0], (int(target.min()), int(target.max())))

    return _CrossEntropySpatial.apply(pred, target=target.astype(np.intp))
