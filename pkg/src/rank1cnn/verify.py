"""Built-in invariant checks behind the ``verify`` CLI command.

Each check exercises one mathematical claim the library rests on, at fixed
seeds and tolerances, and reports pass/fail with the worst error seen.
These run from the installed package on the user's machine; the test suite
covers the same ground (and more) against independent oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import hankel as hk
from .data import synth_blobs
from .layers import ConvLayer
from .network import NetworkSpec, conv, dense, flatten, maxpool, relu
from .rank1 import (
    Rank1Filter,
    backprop_factors,
    mode_unfoldings,
    param_count,
    projected_update,
)
from .tensor import PADDING_MODES, conv1d_axis, conv2d_multi, outer3
from .training import TrainConfig, train


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def check_separability(cases: int = 200, tol: float = 1e-10) -> CheckResult:
    """Composed rank-1 convolution equals the 1-D pipeline, all padding modes."""
    rng = np.random.default_rng(7)
    worst = 0.0
    for case in range(cases):
        channels = int(rng.integers(1, 9))
        h = int(rng.integers(3, 13))
        w = int(rng.integers(3, 13))
        d1 = int(rng.integers(1, 4))
        d2 = int(rng.integers(1, 4))
        padding = PADDING_MODES[case % len(PADDING_MODES)]
        x = rng.standard_normal((channels, h, w))
        p = rng.standard_normal(d1)
        q = rng.standard_normal(d2)
        t = rng.standard_normal(channels)
        composed = conv2d_multi(x, outer3(p, q, t), padding)
        mixed = conv1d_axis(x, t, "channel")
        pipeline = conv1d_axis(conv1d_axis(mixed, p, "vertical", padding), q, "horizontal", padding)
        swapped = conv1d_axis(conv1d_axis(mixed, q, "horizontal", padding), p, "vertical", padding)
        scale = max(float(np.abs(composed).max()), 1e-30)
        worst = max(
            worst,
            float(np.abs(composed - pipeline).max()) / scale,
            float(np.abs(composed - swapped).max()) / scale,
        )
    return CheckResult(
        "separability", worst <= tol,
        f"{cases} cases, max rel err {worst:.3e} (tol {tol:.0e})",
    )


def check_factor_gradients(nets: int = 50, tol: float = 1e-5, step: float = 1e-6) -> CheckResult:
    """Factor gradients off the conv backward pass match central finite differences."""
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(nets):
        channels = int(rng.integers(1, 5))
        h = int(rng.integers(4, 8))
        w = int(rng.integers(4, 8))
        filters = int(rng.integers(1, 4))
        layer = ConvLayer("rank1", channels, filters, rng=rng)
        x = rng.standard_normal((2, channels, h, w))
        probe = rng.standard_normal((2, filters, h, w))

        def loss() -> float:
            return float(np.sum(layer.forward(x, training=True) * probe))

        loss()
        layer.backward(probe)
        analytic = layer.grads["factors"]
        for m, filt in enumerate(layer.rank1_filters):
            for name in ("vertical", "horizontal", "lateral"):
                factor = getattr(filt, name)
                grad = getattr(analytic[m], name)
                for idx in range(factor.size):
                    saved = factor[idx]
                    factor[idx] = saved + step
                    up = loss()
                    factor[idx] = saved - step
                    down = loss()
                    factor[idx] = saved
                    fd = (up - down) / (2 * step)
                    denom = max(abs(fd), abs(grad[idx]), 1e-8)
                    worst = max(worst, abs(fd - grad[idx]) / denom)
    return CheckResult(
        "factor-gradients", worst <= tol,
        f"{nets} nets, max rel err {worst:.3e} (tol {tol:.0e})",
    )


def check_update_algebra(cases: int = 100, tol: float = 1e-12) -> CheckResult:
    """The projected update equals the expanded product of shifted factors."""
    rng = np.random.default_rng(13)
    worst = 0.0
    for _ in range(cases):
        channels = int(rng.integers(1, 6))
        d1 = int(rng.integers(1, 4))
        d2 = int(rng.integers(1, 4))
        alpha = float(rng.uniform(0.01, 1.0))
        f = Rank1Filter(rng.standard_normal(d1), rng.standard_normal(d2),
                        rng.standard_normal(channels))
        g = rng.standard_normal((channels, d1, d2))
        grads = backprop_factors(f, g)
        updated = projected_update(f, grads, alpha)
        p, q, t = f.vertical, f.horizontal, f.lateral
        a, b, c = grads.vertical, grads.horizontal, grads.lateral
        expansion = (
            outer3(p, q, t)
            - alpha * (outer3(a, q, t) + outer3(p, b, t) + outer3(p, q, c))
            + alpha ** 2 * (outer3(a, b, t) + outer3(a, q, c) + outer3(p, b, c))
            - alpha ** 3 * outer3(a, b, c)
        )
        worst = max(worst, float(np.abs(updated.composed - expansion).max()))
    return CheckResult(
        "update-algebra", worst <= tol,
        f"{cases} cases, max abs err {worst:.3e} (tol {tol:.0e})",
    )


def check_rank1_preservation(iterations: int = 60, tol: float = 1e-10) -> CheckResult:
    """Every conv filter stays rank-1 in all three unfoldings while training."""
    spec = NetworkSpec("verify-net", (1, 12, 12), 3, [
        conv(4), relu(), maxpool(), conv(6), relu(), flatten(), dense(3),
    ])
    data = synth_blobs(3, 40, dims=(1, 12, 12), seed=5)
    worst = 0.0

    def on_step(network, iteration):
        nonlocal worst
        for layer in network.layers:
            if isinstance(layer, ConvLayer):
                for filt in layer.rank1_filters:
                    for unfolding in mode_unfoldings(filt.composed):
                        sigma = hk.jacobi_singular_values(unfolding)
                        if sigma[0] > 0 and sigma.size > 1:
                            worst = max(worst, float(sigma[1] / sigma[0]))

    config = TrainConfig(learning_rate=0.05, batch_size=16, epochs=20,
                         seed=3, mode="rank1", max_iterations=iterations)
    train(spec, data, config, on_step=on_step)
    return CheckResult(
        "rank1-preservation", worst <= tol,
        f"{iterations} iterations, max sigma2/sigma1 {worst:.3e} (tol {tol:.0e})",
    )


def check_hankel_equivalence(tol: float = 1e-12) -> CheckResult:
    """VEC(outputs) == hankel @ weights matches circular correlation, dims <= 8."""
    rng = np.random.default_rng(17)
    worst = 0.0
    for n1 in (2, 4, 5, 8):
        for n2 in (2, 3, 5, 8):
            for d1 in (1, 2, min(3, n1)):
                for d2 in (1, 2, min(3, n2)):
                    if d1 > n1 or d2 > n2:
                        continue
                    channels = int(rng.integers(1, 5))
                    filters = int(rng.integers(1, 5))
                    x = rng.standard_normal((channels, n1, n2))
                    bank = [rng.standard_normal((channels, d1, d2)) for _ in range(filters)]
                    system = hk.assemble_system(x, bank)
                    for m, direct in enumerate(system.output_maps()):
                        spatial = conv2d_multi(x, bank[m], "circular")
                        worst = max(worst, float(np.abs(direct - spatial).max()))
    return CheckResult(
        "hankel-equivalence", worst <= tol,
        f"dims <= 8 sweep, max abs err {worst:.3e} (tol {tol:.0e})",
    )


def check_rank_bound(trials: int = 50, need_dense_exceed: float = 0.8) -> CheckResult:
    """Rank-1 banks always satisfy the output-rank ceiling; dense banks break it."""
    report = hk.rank_bound_experiment(channels=4, filters=8, height=6, width=6,
                                      trials=trials, seed=23)
    rank1_ok = report.satisfied_fraction("rank1")
    dense_exceed = report.exceeded_fraction("dense")
    passed = rank1_ok == 1.0 and dense_exceed >= need_dense_exceed
    return CheckResult(
        "rank-bound", passed,
        f"{trials} trials, rank1 within bound {rank1_ok:.0%}, dense exceeding {dense_exceed:.0%}",
    )


def check_param_count() -> CheckResult:
    """A 64-channel 3x3 rank-1 filter stores 70 numbers against 576 dense."""
    filt = Rank1Filter(np.ones(3), np.ones(3), np.ones(64))
    counts = param_count(filt)
    return CheckResult(
        "param-count", counts == (70, 576),
        f"64x3x3 filter: {counts[0]} factored / {counts[1]} dense (expected 70 / 576)",
    )


ALL_CHECKS = (
    check_separability,
    check_factor_gradients,
    check_update_algebra,
    check_rank1_preservation,
    check_hankel_equivalence,
    check_rank_bound,
    check_param_count,
)


def run_all_checks() -> list[CheckResult]:
    return [check() for check in ALL_CHECKS]
