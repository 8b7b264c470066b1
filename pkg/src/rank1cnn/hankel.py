"""Hankel-matrix view of circular convolution and the rank-bound experiment.

A circular 1-D convolution can be written as a matrix product between a
wrap-around Hankel matrix built from the signal and the filter vector; the
2-D multi-channel analogue stacks block Hankel matrices side by side per
channel.  Writing a whole conv layer this way, VEC(outputs) = H x W, turns
questions about the layer's expressive power into plain matrix-rank
questions: rank(Y) <= min(rank(H), rank(W)), and a bank of rank-1 filters
sharing its spatial factors caps rank(W) at min(channels, filters).

Rank decisions use an in-repo one-sided Jacobi SVD so the analysis does not
depend on any external linear-algebra routine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, as_tensor, check_vector, outer3


def hankel_1d(series, cols: int) -> np.ndarray:
    """Wrap-around Hankel matrix of a length-n series, n rows by ``cols`` columns.

    H[r, c] = series[(r + c) mod n]; anti-diagonals are constant and the
    indices wrap past the end of the series.
    """
    f = check_vector("series", series)
    n = f.size
    if not 1 <= cols <= n:
        raise ShapeError(f"column count must lie in [1, {n}], got {cols}")
    idx = (np.arange(n)[:, None] + np.arange(cols)[None, :]) % n
    return f[idx]


def hankel_2d(image, d1: int, d2: int) -> np.ndarray:
    """Block wrap-around Hankel matrix of an [n1, n2] image.

    The matrix has n2 x d2 blocks, each the n1 x d1 wrap-around Hankel
    matrix of one image column; block (R, C) holds column (R + C) mod n2.
    With VEC stacking columns, VEC of the circular cross-correlation of the
    image with an unflipped [d1, d2] window anchored at the top left equals
    hankel_2d(image, d1, d2) @ VEC(window).
    """
    x = as_tensor(image)
    if x.ndim != 2 or x.size == 0:
        raise ShapeError(f"expected a nonempty 2-D image, got shape {x.shape}")
    n1, n2 = x.shape
    if not 1 <= d1 <= n1:
        raise ShapeError(f"d1 must lie in [1, {n1}], got {d1}")
    if not 1 <= d2 <= n2:
        raise ShapeError(f"d2 must lie in [1, {n2}], got {d2}")
    blocks = [hankel_1d(x[:, c], d1) for c in range(n2)]
    rows = []
    for big_r in range(n2):
        rows.append(np.hstack([blocks[(big_r + big_c) % n2] for big_c in range(d2)]))
    return np.vstack(rows)


def hankel_multi(images, d1: int, d2: int) -> np.ndarray:
    """Channel-stacked block Hankel matrix of an [N, n1, n2] image stack.

    Per-channel hankel_2d matrices are stacked side by side, giving
    n1*n2 rows and N*d1*d2 columns.
    """
    x = as_tensor(images)
    if x.ndim != 3 or x.size == 0:
        raise ShapeError(f"expected a nonempty [channels, n1, n2] stack, got {x.shape}")
    return np.hstack([hankel_2d(x[k], d1, d2) for k in range(x.shape[0])])


def vec(matrix) -> np.ndarray:
    """Column-stacking vectorization."""
    m = as_tensor(matrix)
    if m.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {m.shape}")
    return m.flatten(order="F")


def unvec(vector, shape) -> np.ndarray:
    """Inverse of :func:`vec` for a given [n1, n2] shape."""
    v = check_vector("vector", vector)
    n1, n2 = (int(s) for s in shape)
    if v.size != n1 * n2:
        raise ShapeError(f"cannot unvec {v.size} entries into {(n1, n2)}")
    return v.reshape((n1, n2), order="F")


@dataclass
class HankelSystem:
    """The matrix form VEC(outputs) = hankel @ weights of one conv layer.

    ``hankel`` is [n1*n2, channels*d1*d2], ``weights`` [channels*d1*d2,
    filters] with one column per filter (channel blocks of d1*d2 rows,
    each block the VEC of that channel's window), and ``outputs`` always
    equals their product; column m is VEC of the circular correlation map
    of filter m.
    """

    hankel: np.ndarray
    weights: np.ndarray
    outputs: np.ndarray
    out_shape: tuple[int, int]
    channels: int
    kernel: tuple[int, int]

    def weight_blocks(self) -> list[np.ndarray]:
        """Per-channel [d1*d2, filters] sub-matrices of the weight matrix."""
        return [b for b in np.split(self.weights, self.channels, axis=0)]

    def output_maps(self) -> list[np.ndarray]:
        """The outputs unstacked back into [n1, n2] maps, one per filter."""
        return [unvec(col, self.out_shape) for col in self.outputs.T]


def _as_filter_list(filters, channels: int):
    if hasattr(filters, "dense_filters"):
        filters = filters.dense_filters()
    dense = [as_tensor(f) for f in filters]
    if not dense:
        raise ShapeError("need at least one filter")
    shape = dense[0].shape
    if len(shape) != 3 or any(f.shape != shape for f in dense):
        raise ShapeError("filters must share one [channels, d1, d2] shape")
    if shape[0] != channels:
        raise ShapeError(f"filters have {shape[0]} channels, images have {channels}")
    return dense


def assemble_system(images, filters) -> HankelSystem:
    """Build the Hankel system of a conv layer applied circularly to one image stack.

    ``filters`` is either a list of dense [channels, d1, d2] arrays or any
    object with a dense_filters() method (a ConvLayer).  The product
    hankel @ weights reproduces, column by column, the circular
    cross-correlation of the stack with each filter.
    """
    x = as_tensor(images)
    if x.ndim != 3 or x.size == 0:
        raise ShapeError(f"expected a nonempty [channels, n1, n2] stack, got {x.shape}")
    channels, n1, n2 = x.shape
    dense = _as_filter_list(filters, channels)
    d1, d2 = dense[0].shape[1], dense[0].shape[2]
    h = hankel_multi(x, d1, d2)
    w = np.column_stack([
        np.concatenate([vec(f[k]) for k in range(channels)]) for f in dense
    ])
    return HankelSystem(
        hankel=h,
        weights=w,
        outputs=h @ w,
        out_shape=(n1, n2),
        channels=channels,
        kernel=(d1, d2),
    )


def jacobi_singular_values(matrix, tol: float = 1e-12, max_sweeps: int = 60) -> np.ndarray:
    """Singular values by the one-sided Jacobi method, in descending order.

    Columns are rotated in pairs until every pair is orthogonal to within
    ``tol`` relative to the column norms; the singular values are then the
    column norms.  Works on any nonempty matrix (transposed internally when
    it is wider than tall).
    """
    a = as_tensor(matrix)
    if a.ndim != 2 or a.size == 0:
        raise ShapeError(f"expected a nonempty matrix, got shape {a.shape}")
    b = a.copy() if a.shape[0] >= a.shape[1] else a.T.copy()
    n = b.shape[1]
    for _ in range(max_sweeps):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                gii = float(b[:, i] @ b[:, i])
                gjj = float(b[:, j] @ b[:, j])
                gij = float(b[:, i] @ b[:, j])
                denom = math.sqrt(gii * gjj)
                if denom == 0.0 or abs(gij) <= tol * denom:
                    continue
                rotated = True
                tau = (gjj - gii) / (2.0 * gij)
                t = math.copysign(1.0, tau) / (abs(tau) + math.hypot(1.0, tau))
                c = 1.0 / math.hypot(1.0, t)
                s = c * t
                bi = b[:, i].copy()
                b[:, i] = c * bi - s * b[:, j]
                b[:, j] = s * bi + c * b[:, j]
        if not rotated:
            break
    else:
        raise ArithmeticError(f"Jacobi sweep did not converge in {max_sweeps} sweeps")
    sigma = np.sqrt(np.sum(b * b, axis=0))
    sigma.sort()
    return sigma[::-1].copy()


def numerical_rank(matrix, rel_tol: float = 1e-8) -> int:
    """Count of singular values above rel_tol times the largest one."""
    if not 0.0 < rel_tol < 1.0:
        raise ValueError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    sigma = jacobi_singular_values(matrix)
    if sigma[0] == 0.0:
        return 0
    return int(np.sum(sigma > rel_tol * sigma[0]))


def rank1_filter_bank(rng: np.random.Generator, channels: int, filters: int,
                      kernel=(3, 3)) -> list[np.ndarray]:
    """Dense filters composed from one shared pair of spatial factors.

    All filters share the vertical and horizontal vectors and differ only in
    their channel-mixing vector, so the stacked weight matrix has rank at
    most min(channels, filters) and each channel block rank one.
    """
    d1, d2 = (int(kernel[0]), int(kernel[1]))
    v = rng.standard_normal(d1)
    h = rng.standard_normal(d2)
    return [outer3(v, h, rng.standard_normal(channels)) for _ in range(filters)]


def dense_filter_bank(rng: np.random.Generator, channels: int, filters: int,
                      kernel=(3, 3)) -> list[np.ndarray]:
    """Unstructured Gaussian filters, the contrast case for the rank bound."""
    d1, d2 = (int(kernel[0]), int(kernel[1]))
    return [rng.standard_normal((channels, d1, d2)) for _ in range(filters)]


@dataclass
class RankTrial:
    trial: int
    mode: str
    rank_hankel: int
    rank_weights: int
    rank_outputs: int
    bound: int
    satisfied: bool


@dataclass
class RankBoundReport:
    channels: int
    filters: int
    height: int
    width: int
    trials: int
    seed: int
    rel_tol: float
    rows: list[RankTrial] = field(default_factory=list)

    def satisfied_fraction(self, mode: str) -> float:
        rows = [r for r in self.rows if r.mode == mode]
        if not rows:
            raise ValueError(f"no trials for mode {mode!r}")
        return sum(r.satisfied for r in rows) / len(rows)

    def exceeded_fraction(self, mode: str) -> float:
        return 1.0 - self.satisfied_fraction(mode)


def rank_bound_experiment(channels: int, filters: int, height: int, width: int,
                          trials: int, seed: int = 0, kernel=(3, 3),
                          rel_tol: float = 1e-8) -> RankBoundReport:
    """Empirical check of the output-rank ceiling min(rank(H), channels, filters).

    Each trial draws a Gaussian input stack and convolves it circularly with
    (a) a bank of rank-1 filters sharing their spatial factors and (b) an
    unstructured dense bank.  Numerical ranks of the Hankel matrix, the
    weight matrix and the stacked outputs are recorded per bank together
    with whether rank(Y) stayed within the ceiling.
    """
    if trials < 1:
        raise ValueError(f"trials must be positive, got {trials}")
    rng = np.random.default_rng(seed)
    report = RankBoundReport(channels, filters, height, width, trials, seed, rel_tol)
    for trial in range(trials):
        images = rng.standard_normal((channels, height, width))
        banks = (
            ("rank1", rank1_filter_bank(rng, channels, filters, kernel)),
            ("dense", dense_filter_bank(rng, channels, filters, kernel)),
        )
        for mode, bank in banks:
            system = assemble_system(images, bank)
            rank_h = numerical_rank(system.hankel, rel_tol)
            rank_w = numerical_rank(system.weights, rel_tol)
            rank_y = numerical_rank(system.outputs, rel_tol)
            bound = min(rank_h, channels, filters)
            report.rows.append(RankTrial(
                trial=trial,
                mode=mode,
                rank_hankel=rank_h,
                rank_weights=rank_w,
                rank_outputs=rank_y,
                bound=bound,
                satisfied=rank_y <= bound,
            ))
    return report


RANK_REPORT_HEADER = "trial,mode,rank_H,rank_W,rank_Y,bound,satisfied"


def write_rank_report_csv(report: RankBoundReport, path):
    with open(path, "w", newline="") as fh:
        fh.write(RANK_REPORT_HEADER + "\n")
        for r in report.rows:
            fh.write(
                f"{r.trial},{r.mode},{r.rank_hankel},{r.rank_weights},"
                f"{r.rank_outputs},{r.bound},{str(r.satisfied).lower()}\n"
            )
