"""SGD training loop with per-iteration metrics and deterministic replay."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, batches
from .layers import softmax_xent
from .network import Network, NetworkSpec, build_network


class TrainingDiverged(RuntimeError):
    """The loss left the set of finite numbers; training was aborted."""


@dataclass
class TrainConfig:
    learning_rate: float
    batch_size: int = 32
    epochs: int = 1
    seed: int = 0
    mode: str = "rank1"
    eval_every: int = 0
    deterministic: bool = True
    momentum: float = 0.0
    max_iterations: int | None = None

    def __post_init__(self):
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ValueError(f"learning_rate must be positive and finite, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be nonnegative, got {self.epochs}")
        if self.eval_every < 0:
            raise ValueError(f"eval_every must be nonnegative, got {self.eval_every}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError(f"max_iterations must be positive, got {self.max_iterations}")


@dataclass
class MetricRow:
    iteration: int
    epoch: int
    loss: float
    test_accuracy: float | None
    wall_ms: int


@dataclass
class TrainRun:
    """Everything a training call produced besides the network itself."""

    rows: list[MetricRow] = field(default_factory=list)
    epochs_completed: int = 0
    conv_params_factored: int = 0
    conv_params_dense: int = 0

    @property
    def final_accuracy(self) -> float | None:
        for row in reversed(self.rows):
            if row.test_accuracy is not None:
                return row.test_accuracy
        return None

    @property
    def final_loss(self) -> float | None:
        return self.rows[-1].loss if self.rows else None


CSV_HEADER = "iteration,epoch,loss,test_accuracy,wall_ms"


def write_metrics_csv(run: TrainRun, path):
    """Write the per-iteration metric log; floats use their shortest repr,
    so identical runs produce byte-identical files."""
    with open(path, "w", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in run.rows:
            acc = "" if r.test_accuracy is None else repr(r.test_accuracy)
            fh.write(f"{r.iteration},{r.epoch},{r.loss!r},{acc},{r.wall_ms}\n")


def evaluate(network: Network, data: Dataset, batch_size: int = 256) -> float:
    """Classification accuracy in eval mode (no dropout, running batch stats)."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    correct = 0
    for xb, yb in batches(data, batch_size):
        correct += int(np.sum(network.predict(xb) == yb))
    return correct / len(data)


def train(spec: NetworkSpec, train_data: Dataset, config: TrainConfig,
          eval_data: Dataset | None = None, on_step=None) -> tuple[Network, TrainRun]:
    """Train a freshly built network with plain minibatch SGD.

    One parameter update per minibatch at a constant learning rate; rank-1
    conv layers recompose their filters from the updated factors after every
    step.  The whole run is a pure function of the config seed: batch
    shuffling, weight init and dropout all draw from one generator.
    ``on_step(network, iteration)`` is called after each update when given.
    """
    rng = np.random.default_rng(config.seed)
    network = build_network(spec, config.mode, rng)
    report = network.param_report()
    run = TrainRun(
        conv_params_factored=report.conv_factored,
        conv_params_dense=report.conv_dense,
    )
    start = time.perf_counter()

    def wall_ms() -> int:
        if config.deterministic:
            return 0
        return int((time.perf_counter() - start) * 1000)

    iteration = 0
    for epoch in range(1, config.epochs + 1):
        shuffle_seed = int(rng.integers(2 ** 63))
        hit_cap = False
        for xb, yb in batches(train_data, config.batch_size, shuffle_seed):
            logits = network.forward(xb, training=True, rng=rng)
            loss, dlogits = softmax_xent(logits, yb)
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"loss became {loss} at iteration {iteration + 1}; "
                    f"lower the learning rate"
                )
            network.backward(dlogits)
            network.step(config.learning_rate, config.momentum)
            iteration += 1
            if on_step is not None:
                on_step(network, iteration)
            accuracy = None
            if (eval_data is not None and config.eval_every
                    and iteration % config.eval_every == 0):
                accuracy = evaluate(network, eval_data)
            run.rows.append(MetricRow(iteration, epoch, loss, accuracy, wall_ms()))
            if config.max_iterations is not None and iteration >= config.max_iterations:
                hit_cap = True
                break
        if eval_data is not None and run.rows and run.rows[-1].test_accuracy is None:
            run.rows[-1].test_accuracy = evaluate(network, eval_data)
            run.rows[-1].wall_ms = wall_ms()
        run.epochs_completed = epoch
        if hit_cap:
            break
    return network, run
