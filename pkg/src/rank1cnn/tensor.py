"""Dense float64 array kit shared by the whole library.

Layout conventions, fixed globally:

* arrays are row-major float64; multi-channel images are indexed
  [channel, vertical, horizontal] and single filters [channel, d1, d2];
* "convolution" always means cross-correlation: the kernel is never
  flipped;
* padding is one of "same" (zero padded so stride-1 output keeps the
  input extent, extra padding going to the top/left), "valid" (no
  padding), or "circular" (indices wrap around, output anchored at the
  top-left corner of the input).
"""

from __future__ import annotations

import numpy as np

PADDING_MODES = ("same", "valid", "circular")

AXIS_NAMES = ("channel", "vertical", "horizontal")


class ShapeError(ValueError):
    """An operand's shape violates the operation's contract."""


def as_tensor(values) -> np.ndarray:
    """Coerce to a float64 ndarray, without copying when already one."""
    return np.asarray(values, dtype=np.float64)


def check_vector(name: str, values) -> np.ndarray:
    """Coerce to float64 and require a nonempty 1-D vector."""
    v = as_tensor(values)
    if v.ndim != 1 or v.size == 0:
        raise ShapeError(f"{name} must be a nonempty 1-D vector, got shape {v.shape}")
    return v


def outer3(vertical, horizontal, lateral) -> np.ndarray:
    """Outer product of three vectors as a [channels, d1, d2] weight tensor.

    out[k, i, j] == vertical[i] * horizontal[j] * lateral[k]
    """
    p = check_vector("vertical", vertical)
    q = check_vector("horizontal", horizontal)
    t = check_vector("lateral", lateral)
    return np.einsum("i,j,k->kij", p, q, t)


def same_pad_split(extent: int) -> tuple[int, int]:
    """Zero padding (before, after) that preserves the extent at stride 1.

    For even kernel extents the smaller half goes before, so the output
    stays aligned with the input's top-left corner.
    """
    before = (extent - 1) // 2
    return before, extent - 1 - before


def _pad_widths(padding: str, extent: int, kernel: int) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    if padding == "same":
        return same_pad_split(kernel)
    if padding == "circular":
        # wrap-around reuses input content, so the kernel may not exceed it
        if kernel > extent:
            raise ShapeError(
                f"circular padding needs kernel extent {kernel} <= input extent {extent}"
            )
        return 0, kernel - 1
    raise ValueError(f"unknown padding mode {padding!r}, expected one of {PADDING_MODES}")


def pad_axis(x: np.ndarray, axis: int, padding: str, kernel: int) -> np.ndarray:
    """Pad one axis of ``x`` for a cross-correlation with a length-``kernel`` window."""
    before, after = _pad_widths(padding, x.shape[axis], kernel)
    if before == 0 and after == 0:
        return x
    widths = [(0, 0)] * x.ndim
    widths[axis] = (before, after)
    mode = "wrap" if padding == "circular" else "constant"
    return np.pad(x, widths, mode=mode)


def fold_axis_grad(g: np.ndarray, axis: int, padding: str, kernel: int, extent: int) -> np.ndarray:
    """Adjoint of :func:`pad_axis`: collapse a padded-axis gradient back to ``extent``."""
    before, after = _pad_widths(padding, extent, kernel)
    if before == 0 and after == 0:
        return g
    sl = [slice(None)] * g.ndim

    def take(lo, hi):
        sl[axis] = slice(lo, hi)
        return g[tuple(sl)]

    if padding == "same":
        return take(before, before + extent).copy()
    # circular: the wrapped tail overlays the leading rows
    out = take(0, extent).copy()
    sl_out = [slice(None)] * g.ndim
    sl_out[axis] = slice(0, after)
    out[tuple(sl_out)] += take(extent, extent + after)
    return out


def conv2d_multi(image, filt, padding: str = "valid", stride: int = 1) -> np.ndarray:
    """Multi-channel 2-D cross-correlation collapsed to one output map.

    ``image`` is [channels, height, width] and ``filt`` [channels, d1, d2];
    every channel is correlated with its filter slice and the results are
    summed:  out[i, j] = sum_k sum_a sum_b image[k, i*s+a, j*s+b] * filt[k, a, b]
    with indices shifted or wrapped according to the padding mode.
    """
    x = as_tensor(image)
    w = as_tensor(filt)
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"expected 3-D image and filter, got {x.shape} and {w.shape}")
    if x.shape[0] != w.shape[0]:
        raise ShapeError(f"channel mismatch: image has {x.shape[0]}, filter has {w.shape[0]}")
    if w.size == 0:
        raise ShapeError("empty filter")
    if not isinstance(stride, (int, np.integer)) or stride < 1:
        raise ValueError(f"stride must be a positive integer, got {stride!r}")
    d1, d2 = w.shape[1], w.shape[2]
    xp = pad_axis(pad_axis(x, 1, padding, d1), 2, padding, d2)
    if d1 > xp.shape[1] or d2 > xp.shape[2]:
        raise ShapeError(
            f"filter {w.shape[1:]} larger than padded image {xp.shape[1:]}"
        )
    win = np.lib.stride_tricks.sliding_window_view(xp, (d1, d2), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    return np.einsum("nijab,nab->ij", win, w)


def conv1d_axis(image, kernel, axis: str, padding: str = "valid") -> np.ndarray:
    """1-D cross-correlation along one named axis.

    Axis "channel" contracts the whole channel extent down to a single map
    (the kernel length must equal the channel count, and the input must be
    [channels, height, width]).  "vertical" and "horizontal" slide the
    kernel along that axis independently for every other index, e.g. on a
    [height, width] map or per channel of a 3-D stack.
    """
    x = as_tensor(image)
    k = check_vector("kernel", kernel)
    if axis == "channel":
        if x.ndim != 3:
            raise ShapeError(f"channel convolution expects [channels, height, width], got {x.shape}")
        if k.size != x.shape[0]:
            raise ShapeError(f"kernel length {k.size} != channel count {x.shape[0]}")
        return np.einsum("k,khw->hw", k, x)
    if axis not in AXIS_NAMES:
        raise ValueError(f"unknown axis {axis!r}, expected one of {AXIS_NAMES}")
    ax = x.ndim - (2 if axis == "vertical" else 1)
    if ax < 0:
        raise ShapeError(f"input of shape {x.shape} has no {axis} axis")
    xp = pad_axis(x, ax, padding, k.size)
    if k.size > xp.shape[ax]:
        raise ShapeError(f"kernel length {k.size} larger than padded extent {xp.shape[ax]}")
    win = np.lib.stride_tricks.sliding_window_view(xp, k.size, axis=ax)
    return win @ k


def matmul(a, b) -> np.ndarray:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects two matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def transpose(a) -> np.ndarray:
    return np.transpose(as_tensor(a))


def reshape(a, shape) -> np.ndarray:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"cannot reshape {a.size} elements into {shape}")
    return a.reshape(shape)


def add(a, b) -> np.ndarray:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a + b


def scale(a, c) -> np.ndarray:
    return as_tensor(a) * float(c)


def argmax(a, axis=None):
    return np.argmax(as_tensor(a), axis=axis)


def reduce_sum(a, axis=None):
    return np.sum(as_tensor(a), axis=axis)


def flatten_index(shape, multi) -> int:
    """Row-major flat index of a multi-index (last axis varies fastest)."""
    if len(multi) != len(shape):
        raise ShapeError(f"index arity {len(multi)} != rank {len(shape)}")
    flat = 0
    for extent, m in zip(shape, multi):
        if not 0 <= m < extent:
            raise IndexError(f"index {tuple(multi)} out of bounds for shape {tuple(shape)}")
        flat = flat * extent + m
    return flat


def unflatten_index(shape, flat: int) -> tuple[int, ...]:
    """Inverse of :func:`flatten_index`."""
    total = 1
    for extent in shape:
        total *= extent
    if not 0 <= flat < total:
        raise IndexError(f"flat index {flat} out of bounds for shape {tuple(shape)}")
    out = []
    for extent in reversed(shape):
        out.append(flat % extent)
        flat //= extent
    return tuple(reversed(out))
