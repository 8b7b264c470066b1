"""Rank-1 factorized 3-D convolution filters.

A filter is stored as three 1-D factor vectors whose outer product is the
dense [channels, d1, d2] weight tensor.  Training never edits the dense
weights directly: the dense gradient is routed down onto the factors, the
factors take the SGD step, and the dense filter is rebuilt from them, so
the weight tensor stays exactly rank-1 in every mode-unfolding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, as_tensor, check_vector, outer3


@dataclass
class Rank1Filter:
    """One convolution filter held as its three factor vectors.

    ``lateral`` (length = input channels) mixes the channel axis,
    ``vertical`` (length d1) and ``horizontal`` (length d2) are the spatial
    kernels.  ``composed`` caches the dense tensor built by :func:`compose`.
    """

    vertical: np.ndarray
    horizontal: np.ndarray
    lateral: np.ndarray
    composed: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        self.vertical = check_vector("vertical", self.vertical)
        self.horizontal = check_vector("horizontal", self.horizontal)
        self.lateral = check_vector("lateral", self.lateral)

    @property
    def shape(self) -> tuple[int, int, int]:
        """Dense shape [channels, d1, d2] of the composed filter."""
        return (self.lateral.size, self.vertical.size, self.horizontal.size)


@dataclass
class FactorGrads:
    """Gradients with respect to the three factor vectors of one filter."""

    vertical: np.ndarray
    horizontal: np.ndarray
    lateral: np.ndarray


def compose(filt: Rank1Filter) -> np.ndarray:
    """Rebuild the dense [channels, d1, d2] tensor and cache it on the filter."""
    filt.composed = outer3(filt.vertical, filt.horizontal, filt.lateral)
    return filt.composed


def backprop_factors(filt: Rank1Filter, dense_grad) -> FactorGrads:
    """Route a dense weight gradient onto the three factor vectors.

    Chain rule through the outer product: each factor's gradient is the
    dense gradient contracted with the other two factors,

        d/dvertical[i]   = sum_{j,k} g[k, i, j] * horizontal[j] * lateral[k]
        d/dhorizontal[j] = sum_{i,k} g[k, i, j] * vertical[i]   * lateral[k]
        d/dlateral[k]    = sum_{i,j} g[k, i, j] * vertical[i]   * horizontal[j]
    """
    g = as_tensor(dense_grad)
    if g.shape != filt.shape:
        raise ShapeError(f"dense gradient shape {g.shape} != filter shape {filt.shape}")
    return FactorGrads(
        vertical=np.einsum("kij,j,k->i", g, filt.horizontal, filt.lateral),
        horizontal=np.einsum("kij,i,k->j", g, filt.vertical, filt.lateral),
        lateral=np.einsum("kij,i,j->k", g, filt.vertical, filt.horizontal),
    )


def projected_update(filt: Rank1Filter, grads: FactorGrads, learning_rate: float) -> Rank1Filter:
    """One SGD step in factor space followed by recomposition.

    Each factor moves against its gradient, then the dense filter is rebuilt
    as the outer product of the shifted factors.  The result therefore lands
    back on the rank-1 set no matter what the dense gradient looked like;
    the difference from a plain dense SGD step is of order learning_rate**2.
    """
    if learning_rate < 0:
        raise ValueError(f"learning rate must be nonnegative, got {learning_rate}")
    for name in ("vertical", "horizontal", "lateral"):
        g = check_vector(name, getattr(grads, name))
        if g.size != getattr(filt, name).size:
            raise ShapeError(
                f"{name} gradient length {g.size} != factor length {getattr(filt, name).size}"
            )
    updated = Rank1Filter(
        vertical=filt.vertical - learning_rate * as_tensor(grads.vertical),
        horizontal=filt.horizontal - learning_rate * as_tensor(grads.horizontal),
        lateral=filt.lateral - learning_rate * as_tensor(grads.lateral),
    )
    compose(updated)
    return updated


def param_count(filt: Rank1Filter) -> tuple[int, int]:
    """(factor parameter count, parameter count of the equivalent dense filter)."""
    channels, d1, d2 = filt.shape
    return d1 + d2 + channels, d1 * d2 * channels


def mode_unfoldings(weights) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The three matricizations of a [channels, d1, d2] weight tensor.

    Returned as (channels x d1*d2, d1 x channels*d2, d2 x channels*d1); a
    composed rank-1 filter has rank one in all three.
    """
    w = as_tensor(weights)
    if w.ndim != 3:
        raise ShapeError(f"expected a 3-D weight tensor, got shape {w.shape}")
    n, d1, d2 = w.shape
    return (
        w.reshape(n, d1 * d2),
        w.transpose(1, 0, 2).reshape(d1, n * d2),
        w.transpose(2, 0, 1).reshape(d2, n * d1),
    )


def factor_uniform_bound(channels: int, d1: int, d2: int, filters: int) -> float:
    """Half-width of the uniform initializer for a single factor vector.

    Chosen so the composed dense filter matches the variance a Glorot
    uniform initializer would give it for fan_in = channels*d1*d2 and
    fan_out = filters*d1*d2; each factor is drawn at the cube root of the
    target scale since the three factors multiply.
    """
    fan_in = channels * d1 * d2
    fan_out = filters * d1 * d2
    target_std = math.sqrt(6.0 / (fan_in + fan_out)) / math.sqrt(3.0)
    return math.sqrt(3.0) * target_std ** (1.0 / 3.0)


def random_rank1_filter(rng: np.random.Generator, channels: int, d1: int, d2: int,
                        filters: int) -> Rank1Filter:
    """Freshly initialized filter for a layer with ``filters`` output maps."""
    b = factor_uniform_bound(channels, d1, d2, filters)
    filt = Rank1Filter(
        vertical=rng.uniform(-b, b, d1),
        horizontal=rng.uniform(-b, b, d2),
        lateral=rng.uniform(-b, b, channels),
    )
    compose(filt)
    return filt
