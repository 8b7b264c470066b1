"""Neural network layers over [batch, channels, height, width] stacks.

Every layer exposes forward(x, training, rng), backward(dout) and
step(learning_rate, momentum).  backward stores parameter gradients on the
layer and returns the input gradient; step applies plain SGD (momentum 0
reproduces the unadorned update rule, a positive value is an optional
velocity extension).  Layers cache whatever forward state backward needs,
so a single layer instance must not run overlapping passes.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import ShapeError, as_tensor, fold_axis_grad, outer3, pad_axis, same_pad_split
from .rank1 import (
    FactorGrads,
    Rank1Filter,
    backprop_factors,
    compose,
    factor_uniform_bound,
    projected_update,
    random_rank1_filter,
)

CONV_MODES = ("standard", "rank1", "sequential-1d")

_MODE_ALIASES = {"rank1-composed": "rank1"}


def canonical_mode(mode: str) -> str:
    """Resolve a conv weight mode name, accepting the long alias."""
    resolved = _MODE_ALIASES.get(mode, mode)
    if resolved not in CONV_MODES:
        raise ValueError(f"unknown conv mode {mode!r}, expected one of {CONV_MODES}")
    return resolved


def _im2col(xp: np.ndarray, d1: int, d2: int, stride: int):
    """Unfold padded [B, N, Hp, Wp] into [B, N*d1*d2, out_h*out_w] patches."""
    b, n, hp, wp = xp.shape
    if d1 > hp or d2 > wp:
        raise ShapeError(f"kernel ({d1}, {d2}) larger than padded input ({hp}, {wp})")
    oh = (hp - d1) // stride + 1
    ow = (wp - d2) // stride + 1
    col = np.empty((b, n, d1, d2, oh, ow))
    for a in range(d1):
        for c in range(d2):
            col[:, :, a, c] = xp[:, :, a:a + stride * oh:stride, c:c + stride * ow:stride]
    return col.reshape(b, n * d1 * d2, oh * ow), (oh, ow)


def _col2im(dcol: np.ndarray, xp_shape, d1: int, d2: int, stride: int) -> np.ndarray:
    b, n, hp, wp = xp_shape
    oh = (hp - d1) // stride + 1
    ow = (wp - d2) // stride + 1
    dc = dcol.reshape(b, n, d1, d2, oh, ow)
    dxp = np.zeros(xp_shape)
    for a in range(d1):
        for c in range(d2):
            dxp[:, :, a:a + stride * oh:stride, c:c + stride * ow:stride] += dc[:, :, a, c]
    return dxp


class Layer:
    """Base layer: stateless pass-through defaults."""

    def forward(self, x, training: bool = False, rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def step(self, learning_rate: float, momentum: float = 0.0):
        pass

    def state(self) -> dict:
        return {}

    def load_state(self, state: dict):
        if state:
            raise ValueError(f"{type(self).__name__} holds no parameters, got {sorted(state)}")


class ConvLayer(Layer):
    """2-D convolution with one of three weight parameterizations.

    * "standard": a dense [filters, channels, d1, d2] weight tensor;
    * "rank1": one Rank1Filter per output map, recomposed into the dense
      tensor at every forward pass and updated through its factors;
    * "sequential-1d": per output map an independent channel-mixing vector,
      vertical kernel and horizontal kernel applied in series and trained
      directly, with no dense tensor anywhere.

    All modes share the bias, padding and stride handling, so a network can
    swap modes without touching anything else.
    """

    def __init__(self, mode: str, in_channels: int, filters: int, kernel=(3, 3),
                 padding: str = "same", stride: int = 1, *, rng=None):
        self.mode = canonical_mode(mode)
        if in_channels < 1 or filters < 1:
            raise ValueError("in_channels and filters must be positive")
        d1, d2 = (int(kernel[0]), int(kernel[1]))
        if d1 < 1 or d2 < 1:
            raise ValueError(f"kernel extents must be positive, got {kernel}")
        if padding not in ("same", "valid", "circular"):
            raise ValueError(f"unknown padding mode {padding!r}")
        if stride < 1:
            raise ValueError(f"stride must be positive, got {stride}")
        if self.mode == "sequential-1d" and stride != 1:
            raise ValueError("sequential-1d convolution supports stride 1 only")
        self.in_channels = in_channels
        self.filters = filters
        self.kernel = (d1, d2)
        self.padding = padding
        self.stride = stride
        rng = rng if rng is not None else np.random.default_rng()
        if self.mode == "standard":
            bound = math.sqrt(6.0 / ((in_channels + filters) * d1 * d2))
            self.weights = rng.uniform(-bound, bound, (filters, in_channels, d1, d2))
        elif self.mode == "rank1":
            self.rank1_filters = [
                random_rank1_filter(rng, in_channels, d1, d2, filters) for _ in range(filters)
            ]
        else:
            b = factor_uniform_bound(in_channels, d1, d2, filters)
            self.lateral = rng.uniform(-b, b, (filters, in_channels))
            self.vertical = rng.uniform(-b, b, (filters, d1))
            self.horizontal = rng.uniform(-b, b, (filters, d2))
        self.bias = np.zeros(filters)
        self.grads = {}
        self._vel = {}
        self._cache = None

    def dense_filters(self) -> list[np.ndarray]:
        """The q dense [channels, d1, d2] filters, composed where factored."""
        if self.mode == "standard":
            return [self.weights[m] for m in range(self.filters)]
        if self.mode == "rank1":
            return [compose(f) for f in self.rank1_filters]
        return [
            outer3(self.vertical[m], self.horizontal[m], self.lateral[m])
            for m in range(self.filters)
        ]

    def forward(self, x, training: bool = False, rng=None):
        x = as_tensor(x)
        squeeze = x.ndim == 3
        if squeeze:
            x = x[None]
        if x.ndim != 4:
            raise ShapeError(f"expected [batch, channels, height, width], got {x.shape}")
        if x.shape[1] != self.in_channels:
            raise ShapeError(f"input has {x.shape[1]} channels, layer expects {self.in_channels}")
        if self.mode == "sequential-1d":
            out = self._seq_forward(x)
        else:
            out = self._dense_forward(x)
        self._squeezed = squeeze
        return out[0] if squeeze else out

    def backward(self, dout):
        dout = as_tensor(dout)
        if self._squeezed:
            dout = dout[None]
        if self.mode == "sequential-1d":
            dx = self._seq_backward(dout)
        else:
            dx = self._dense_backward(dout)
        return dx[0] if self._squeezed else dx

    # dense path (standard and rank1 share it; rank1 recomposes first)

    def _dense_forward(self, x):
        d1, d2 = self.kernel
        if self.mode == "standard":
            w4 = self.weights
        else:
            w4 = np.stack(self.dense_filters())
        xp = pad_axis(pad_axis(x, 2, self.padding, d1), 3, self.padding, d2)
        col, (oh, ow) = _im2col(xp, d1, d2, self.stride)
        out = np.einsum("qf,bfp->bqp", w4.reshape(self.filters, -1), col)
        out = out.reshape(x.shape[0], self.filters, oh, ow)
        out += self.bias[None, :, None, None]
        self._cache = (x.shape, xp.shape, col, w4)
        return out

    def _dense_backward(self, dout):
        x_shape, xp_shape, col, w4 = self._cache
        d1, d2 = self.kernel
        b, q, oh, ow = dout.shape
        g = dout.reshape(b, q, oh * ow)
        dw4 = np.einsum("bqp,bfp->qf", g, col).reshape(w4.shape)
        db = g.sum(axis=(0, 2))
        dcol = np.einsum("qf,bqp->bfp", w4.reshape(q, -1), g)
        dxp = _col2im(dcol, xp_shape, d1, d2, self.stride)
        dx = fold_axis_grad(dxp, 3, self.padding, d2, x_shape[3])
        dx = fold_axis_grad(dx, 2, self.padding, d1, x_shape[2])
        if self.mode == "standard":
            self.grads = {"weights": dw4, "bias": db}
        else:
            self.grads = {
                "factors": [backprop_factors(f, dw4[m]) for m, f in enumerate(self.rank1_filters)],
                "bias": db,
            }
        return dx

    # sequential-1d path: channel mix, vertical kernel, horizontal kernel

    def _seq_forward(self, x):
        d1, d2 = self.kernel
        lat = np.einsum("mk,bkhw->bmhw", self.lateral, x)
        vp = pad_axis(lat, 2, self.padding, d1)
        oh = vp.shape[2] - d1 + 1
        vert = np.zeros((x.shape[0], self.filters, oh, vp.shape[3]))
        for a in range(d1):
            vert += self.vertical[:, a][None, :, None, None] * vp[:, :, a:a + oh, :]
        hp = pad_axis(vert, 3, self.padding, d2)
        ow = hp.shape[3] - d2 + 1
        out = np.zeros((x.shape[0], self.filters, oh, ow))
        for c in range(d2):
            out += self.horizontal[:, c][None, :, None, None] * hp[:, :, :, c:c + ow]
        out += self.bias[None, :, None, None]
        self._cache = (x, lat.shape, vp, hp)
        return out

    def _seq_backward(self, dout):
        x, lat_shape, vp, hp = self._cache
        d1, d2 = self.kernel
        b, q, oh, ow = dout.shape
        db = dout.sum(axis=(0, 2, 3))
        dhoriz = np.empty((q, d2))
        dhp = np.zeros_like(hp)
        for c in range(d2):
            dhoriz[:, c] = np.einsum("bmij,bmij->m", dout, hp[:, :, :, c:c + ow])
            dhp[:, :, :, c:c + ow] += self.horizontal[:, c][None, :, None, None] * dout
        dvert = fold_axis_grad(dhp, 3, self.padding, d2, vp.shape[3])
        dvertical = np.empty((q, d1))
        dvp = np.zeros_like(vp)
        for a in range(d1):
            dvertical[:, a] = np.einsum("bmij,bmij->m", dvert, vp[:, :, a:a + oh, :])
            dvp[:, :, a:a + oh, :] += self.vertical[:, a][None, :, None, None] * dvert
        dlat = fold_axis_grad(dvp, 2, self.padding, d1, lat_shape[2])
        dlateral = np.einsum("bmhw,bkhw->mk", dlat, x)
        dx = np.einsum("mk,bmhw->bkhw", self.lateral, dlat)
        self.grads = {
            "lateral": dlateral,
            "vertical": dvertical,
            "horizontal": dhoriz,
            "bias": db,
        }
        return dx

    def step(self, learning_rate: float, momentum: float = 0.0):
        if not self.grads:
            return
        if self.mode == "rank1":
            grads = self.grads["factors"]
            if momentum:
                vel = self._vel.setdefault(
                    "factors",
                    [FactorGrads(np.zeros_like(f.vertical), np.zeros_like(f.horizontal),
                                 np.zeros_like(f.lateral)) for f in self.rank1_filters],
                )
                for v, g in zip(vel, grads):
                    v.vertical = momentum * v.vertical + g.vertical
                    v.horizontal = momentum * v.horizontal + g.horizontal
                    v.lateral = momentum * v.lateral + g.lateral
                grads = vel
            self.rank1_filters = [
                projected_update(f, g, learning_rate) for f, g in zip(self.rank1_filters, grads)
            ]
            self._apply("bias", self.bias, self.grads["bias"], learning_rate, momentum)
        else:
            for name, grad in self.grads.items():
                self._apply(name, getattr(self, name), grad, learning_rate, momentum)

    def _apply(self, name, param, grad, learning_rate, momentum):
        if momentum:
            vel = self._vel.setdefault(name, np.zeros_like(param))
            vel *= momentum
            vel += grad
            grad = vel
        param -= learning_rate * grad

    def state(self) -> dict:
        if self.mode == "standard":
            return {"weights": self.weights.copy(), "bias": self.bias.copy()}
        if self.mode == "rank1":
            return {
                "vertical": np.stack([f.vertical for f in self.rank1_filters]),
                "horizontal": np.stack([f.horizontal for f in self.rank1_filters]),
                "lateral": np.stack([f.lateral for f in self.rank1_filters]),
                "bias": self.bias.copy(),
            }
        return {
            "lateral": self.lateral.copy(),
            "vertical": self.vertical.copy(),
            "horizontal": self.horizontal.copy(),
            "bias": self.bias.copy(),
        }

    def load_state(self, state: dict):
        expected = sorted(self.state())
        if sorted(state) != expected:
            raise ValueError(f"conv state keys {sorted(state)} != expected {expected}")
        if self.mode == "standard":
            self.weights = as_tensor(state["weights"]).reshape(self.weights.shape).copy()
        elif self.mode == "rank1":
            self.rank1_filters = [
                Rank1Filter(v.copy(), h.copy(), t.copy())
                for v, h, t in zip(state["vertical"], state["horizontal"], state["lateral"])
            ]
            for f in self.rank1_filters:
                compose(f)
        else:
            self.lateral = as_tensor(state["lateral"]).copy()
            self.vertical = as_tensor(state["vertical"]).copy()
            self.horizontal = as_tensor(state["horizontal"]).copy()
        self.bias = as_tensor(state["bias"]).copy()


class Relu(Layer):
    def forward(self, x, training: bool = False, rng=None):
        x = as_tensor(x)
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return as_tensor(dout) * self._mask


class MaxPool2(Layer):
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""

    def forward(self, x, training: bool = False, rng=None):
        x = as_tensor(x)
        if x.ndim != 4:
            raise ShapeError(f"expected [batch, channels, height, width], got {x.shape}")
        b, c, h, w = x.shape
        oh, ow = h // 2, w // 2
        if oh < 1 or ow < 1:
            raise ShapeError(f"spatial extent {(h, w)} too small for 2x2 pooling")
        v = x[:, :, :oh * 2, :ow * 2].reshape(b, c, oh, 2, ow, 2)
        v = v.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, 4)
        self._idx = v.argmax(axis=-1)
        self._shape = x.shape
        return np.take_along_axis(v, self._idx[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        b, c, h, w = self._shape
        oh, ow = h // 2, w // 2
        dv = np.zeros((b, c, oh, ow, 4))
        np.put_along_axis(dv, self._idx[..., None], as_tensor(dout)[..., None], axis=-1)
        dx = np.zeros(self._shape)
        dx[:, :, :oh * 2, :ow * 2] = (
            dv.reshape(b, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh * 2, ow * 2)
        )
        return dx


class Dropout(Layer):
    """Inverted dropout: active only in training, identity at evaluation."""

    def __init__(self, prob: float):
        if not 0.0 <= prob < 1.0:
            raise ValueError(f"dropout probability must lie in [0, 1), got {prob}")
        self.prob = float(prob)
        self._mask = None

    def forward(self, x, training: bool = False, rng=None):
        x = as_tensor(x)
        if not training or self.prob == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        self._mask = (rng.random(x.shape) >= self.prob) / (1.0 - self.prob)
        return x * self._mask

    def backward(self, dout):
        dout = as_tensor(dout)
        return dout if self._mask is None else dout * self._mask


class BatchNorm(Layer):
    """Per-feature batch normalization with running statistics for eval.

    Normalizes over the batch axis of [batch, features] input, or over
    batch and both spatial axes of [batch, channels, height, width].
    """

    def __init__(self, features: int, epsilon: float = 1e-5, momentum: float = 0.9):
        if features < 1:
            raise ValueError("features must be positive")
        if epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {epsilon}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"running-stat momentum must lie in [0, 1), got {momentum}")
        self.features = features
        self.epsilon = float(epsilon)
        self.momentum = float(momentum)
        self.gamma = np.ones(features)
        self.beta = np.zeros(features)
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)
        self.grads = {}
        self._vel = {}

    def _axes_shape(self, x):
        if x.ndim == 2:
            return (0,), (1, -1)
        if x.ndim == 4:
            return (0, 2, 3), (1, -1, 1, 1)
        raise ShapeError(f"batch norm expects 2-D or 4-D input, got {x.shape}")

    def forward(self, x, training: bool = False, rng=None):
        x = as_tensor(x)
        axes, shape = self._axes_shape(x)
        if x.shape[1] != self.features:
            raise ShapeError(f"input has {x.shape[1]} features, layer expects {self.features}")
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.epsilon)
        xhat = (x - mean.reshape(shape)) * inv.reshape(shape)
        self._cache = (xhat, inv, axes, shape, training)
        return self.gamma.reshape(shape) * xhat + self.beta.reshape(shape)

    def backward(self, dout):
        dout = as_tensor(dout)
        xhat, inv, axes, shape, training = self._cache
        self.grads = {
            "gamma": np.sum(dout * xhat, axis=axes),
            "beta": np.sum(dout, axis=axes),
        }
        dxhat = dout * self.gamma.reshape(shape)
        if not training:
            return dxhat * inv.reshape(shape)
        m = dout.size // dout.shape[1]
        return (inv.reshape(shape) / m) * (
            m * dxhat
            - np.sum(dxhat, axis=axes).reshape(shape)
            - xhat * np.sum(dxhat * xhat, axis=axes).reshape(shape)
        )

    def step(self, learning_rate: float, momentum: float = 0.0):
        for name, grad in self.grads.items():
            param = getattr(self, name)
            if momentum:
                vel = self._vel.setdefault(name, np.zeros_like(param))
                vel *= momentum
                vel += grad
                grad = vel
            param -= learning_rate * grad

    def state(self) -> dict:
        return {
            "gamma": self.gamma.copy(),
            "beta": self.beta.copy(),
            "running_mean": self.running_mean.copy(),
            "running_var": self.running_var.copy(),
        }

    def load_state(self, state: dict):
        if sorted(state) != sorted(self.state()):
            raise ValueError(f"batch norm state keys {sorted(state)} unexpected")
        self.gamma = as_tensor(state["gamma"]).copy()
        self.beta = as_tensor(state["beta"]).copy()
        self.running_mean = as_tensor(state["running_mean"]).copy()
        self.running_var = as_tensor(state["running_var"]).copy()


class Flatten(Layer):
    def forward(self, x, training: bool = False, rng=None):
        x = as_tensor(x)
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return as_tensor(dout).reshape(self._shape)


class Dense(Layer):
    """Fully connected layer on [batch, features] input."""

    def __init__(self, in_features: int, units: int, *, rng=None):
        if in_features < 1 or units < 1:
            raise ValueError("in_features and units must be positive")
        rng = rng if rng is not None else np.random.default_rng()
        bound = math.sqrt(6.0 / (in_features + units))
        self.weights = rng.uniform(-bound, bound, (in_features, units))
        self.bias = np.zeros(units)
        self.grads = {}
        self._vel = {}

    def forward(self, x, training: bool = False, rng=None):
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.weights.shape[0]:
            raise ShapeError(
                f"expected [batch, {self.weights.shape[0]}] input, got {x.shape}"
            )
        self._x = x
        return x @ self.weights + self.bias

    def backward(self, dout):
        dout = as_tensor(dout)
        self.grads = {"weights": self._x.T @ dout, "bias": dout.sum(axis=0)}
        return dout @ self.weights.T

    def step(self, learning_rate: float, momentum: float = 0.0):
        for name, grad in self.grads.items():
            param = getattr(self, name)
            if momentum:
                vel = self._vel.setdefault(name, np.zeros_like(param))
                vel *= momentum
                vel += grad
                grad = vel
            param -= learning_rate * grad

    def state(self) -> dict:
        return {"weights": self.weights.copy(), "bias": self.bias.copy()}

    def load_state(self, state: dict):
        if sorted(state) != ["bias", "weights"]:
            raise ValueError(f"dense state keys {sorted(state)} unexpected")
        self.weights = as_tensor(state["weights"]).copy()
        self.bias = as_tensor(state["bias"]).copy()


def softmax_xent(logits, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over a batch and its gradient w.r.t. logits.

    The log-sum-exp is shifted by the row maximum, so large logits stay
    finite; equal logits over C classes give loss ln(C).
    """
    z = as_tensor(logits)
    if z.ndim != 2:
        raise ShapeError(f"expected [batch, classes] logits, got {z.shape}")
    y = np.asarray(labels)
    if y.shape != (z.shape[0],):
        raise ShapeError(f"labels shape {y.shape} does not match batch {z.shape[0]}")
    if y.size and (y.min() < 0 or y.max() >= z.shape[1]):
        raise ValueError(f"labels must lie in [0, {z.shape[1]}), got range "
                         f"[{y.min()}, {y.max()}]")
    b = z.shape[0]
    shifted = z - z.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1)
    loss = float(np.mean(np.log(total) - shifted[np.arange(b), y]))
    dlogits = exp / total[:, None]
    dlogits[np.arange(b), y] -= 1.0
    dlogits /= b
    return loss, dlogits
