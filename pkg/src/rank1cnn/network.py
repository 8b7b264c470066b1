"""Network assembly: layer specs, shape inference, presets, parameter counts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import (
    BatchNorm,
    ConvLayer,
    Dense,
    Dropout,
    Flatten,
    MaxPool2,
    Relu,
    canonical_mode,
)

LAYER_KINDS = ("conv", "relu", "batchnorm", "maxpool", "dropout", "flatten", "dense")


@dataclass
class LayerSpec:
    """Declarative description of one layer; only the fields its kind uses are set."""

    kind: str
    out_channels: int | None = None
    kernel: tuple[int, int] = (3, 3)
    padding: str = "same"
    units: int | None = None
    prob: float | None = None

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "conv":
            d.update(out_channels=self.out_channels, kernel=list(self.kernel),
                     padding=self.padding)
        elif self.kind == "dense":
            d.update(units=self.units)
        elif self.kind == "dropout":
            d.update(prob=self.prob)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        kind = d["kind"]
        if kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {kind!r}")
        spec = cls(kind)
        if kind == "conv":
            spec.out_channels = int(d["out_channels"])
            spec.kernel = (int(d["kernel"][0]), int(d["kernel"][1]))
            spec.padding = d.get("padding", "same")
        elif kind == "dense":
            spec.units = int(d["units"])
        elif kind == "dropout":
            spec.prob = float(d["prob"])
        return spec


def conv(out_channels: int, kernel=(3, 3), padding: str = "same") -> LayerSpec:
    return LayerSpec("conv", out_channels=out_channels, kernel=tuple(kernel), padding=padding)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def batchnorm() -> LayerSpec:
    return LayerSpec("batchnorm")


def maxpool() -> LayerSpec:
    return LayerSpec("maxpool")


def dropout(prob: float) -> LayerSpec:
    return LayerSpec("dropout", prob=prob)


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def dense(units: int) -> LayerSpec:
    return LayerSpec("dense", units=units)


@dataclass
class NetworkSpec:
    """Architecture description independent of the conv weight mode."""

    name: str
    input_shape: tuple[int, int, int]
    class_count: int
    layers: list[LayerSpec] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "class_count": self.class_count,
            "layers": [ls.to_dict() for ls in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            name=d["name"],
            input_shape=tuple(int(v) for v in d["input_shape"]),
            class_count=int(d["class_count"]),
            layers=[LayerSpec.from_dict(ls) for ls in d["layers"]],
        )


@dataclass
class ConvParamRow:
    """Per-conv-layer parameter counts, excluding biases."""

    index: int
    filters: int
    filter_shape: tuple[int, int, int]
    per_filter_factored: int
    per_filter_dense: int

    @property
    def layer_factored(self) -> int:
        return self.filters * self.per_filter_factored

    @property
    def layer_dense(self) -> int:
        return self.filters * self.per_filter_dense


@dataclass
class ParamReport:
    mode: str
    conv_rows: list[ConvParamRow]
    other_params: int

    @property
    def conv_factored(self) -> int:
        return sum(r.layer_factored for r in self.conv_rows)

    @property
    def conv_dense(self) -> int:
        return sum(r.layer_dense for r in self.conv_rows)

    @property
    def total_trainable(self) -> int:
        conv = self.conv_dense if self.mode == "standard" else self.conv_factored
        return conv + self.other_params

    def lines(self) -> list[str]:
        out = []
        for r in self.conv_rows:
            n, d1, d2 = r.filter_shape
            out.append(
                f"conv[{r.index}]: {r.filters} filters of {n}x{d1}x{d2}, per filter "
                f"{r.per_filter_factored} factored / {r.per_filter_dense} dense, layer "
                f"{r.layer_factored} / {r.layer_dense}"
            )
        out.append(f"conv totals: {self.conv_factored} factored / {self.conv_dense} dense")
        out.append(f"other trainable parameters: {self.other_params}")
        out.append(f"trainable parameters in {self.mode} mode: {self.total_trainable}")
        return out


class Network:
    """An ordered stack of layers with a shared conv weight mode."""

    def __init__(self, spec: NetworkSpec, mode: str, layers: list):
        self.spec = spec
        self.mode = canonical_mode(mode)
        self.layers = layers

    def forward(self, x, training: bool = False, rng=None):
        for layer in self.layers:
            x = layer.forward(x, training=training, rng=rng)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def step(self, learning_rate: float, momentum: float = 0.0):
        for layer in self.layers:
            layer.step(learning_rate, momentum)

    def predict(self, images) -> np.ndarray:
        return np.argmax(self.forward(images, training=False), axis=1)

    def param_report(self) -> ParamReport:
        rows = []
        other = 0
        for i, layer in enumerate(self.layers):
            if isinstance(layer, ConvLayer):
                n = layer.in_channels
                d1, d2 = layer.kernel
                rows.append(ConvParamRow(
                    index=i,
                    filters=layer.filters,
                    filter_shape=(n, d1, d2),
                    per_filter_factored=n + d1 + d2,
                    per_filter_dense=n * d1 * d2,
                ))
                other += layer.bias.size
            elif isinstance(layer, Dense):
                other += layer.weights.size + layer.bias.size
            elif isinstance(layer, BatchNorm):
                other += layer.gamma.size + layer.beta.size
        return ParamReport(self.mode, rows, other)

    def state(self) -> list[dict]:
        return [layer.state() for layer in self.layers]

    def load_state(self, states: list[dict]):
        if len(states) != len(self.layers):
            raise ValueError(f"state has {len(states)} layers, network has {len(self.layers)}")
        for layer, st in zip(self.layers, states):
            layer.load_state(st)


def build_network(spec: NetworkSpec, mode: str, rng=None) -> Network:
    """Instantiate a spec, inferring every intermediate shape.

    Raises ValueError when the stack is inconsistent: pooling a map that is
    already a single pixel, a dense layer before flattening, or a final
    feature count that differs from the class count.
    """
    mode = canonical_mode(mode)
    rng = rng if rng is not None else np.random.default_rng()
    c, h, w = (int(v) for v in spec.input_shape)
    if c < 1 or h < 1 or w < 1:
        raise ValueError(f"input shape must be positive, got {spec.input_shape}")
    if spec.class_count < 2:
        raise ValueError("class_count must be at least 2")
    layers: list = []
    flat: int | None = None
    for i, ls in enumerate(spec.layers):
        where = f"layer {i} ({ls.kind})"
        if ls.kind == "conv":
            if flat is not None:
                raise ValueError(f"{where}: convolution after flatten")
            layers.append(ConvLayer(mode, c, ls.out_channels, ls.kernel, ls.padding, rng=rng))
            c = ls.out_channels
            if ls.padding == "valid":
                h = h - ls.kernel[0] + 1
                w = w - ls.kernel[1] + 1
            if h < 1 or w < 1:
                raise ValueError(f"{where}: spatial extent shrank to {(h, w)}")
        elif ls.kind == "relu":
            layers.append(Relu())
        elif ls.kind == "batchnorm":
            layers.append(BatchNorm(flat if flat is not None else c))
        elif ls.kind == "maxpool":
            if flat is not None:
                raise ValueError(f"{where}: pooling after flatten")
            if h < 2 or w < 2:
                raise ValueError(f"{where}: cannot pool spatial extent {(h, w)}")
            h, w = h // 2, w // 2
            layers.append(MaxPool2())
        elif ls.kind == "dropout":
            layers.append(Dropout(ls.prob))
        elif ls.kind == "flatten":
            if flat is not None:
                raise ValueError(f"{where}: repeated flatten")
            flat = c * h * w
            layers.append(Flatten())
        elif ls.kind == "dense":
            if flat is None:
                raise ValueError(f"{where}: dense layer before flatten")
            layers.append(Dense(flat, ls.units, rng=rng))
            flat = ls.units
        else:
            raise ValueError(f"{where}: unknown layer kind {ls.kind!r}")
    if flat is None:
        raise ValueError("network produces no flat logits; add flatten and dense layers")
    if flat != spec.class_count:
        raise ValueError(f"network emits {flat} logits but class_count is {spec.class_count}")
    return Network(spec, mode, layers)


def mnist_small() -> NetworkSpec:
    """Two small conv blocks and a linear head; trains on a desk in minutes."""
    return NetworkSpec("mnist-small", (1, 28, 28), 10, [
        conv(12), batchnorm(), relu(), maxpool(),
        conv(24), batchnorm(), relu(), maxpool(),
        flatten(), dense(10),
    ])


def mnist_table1() -> NetworkSpec:
    """Seven conv layers and a three-layer head, 28x28 grayscale, 10 classes."""
    return NetworkSpec("mnist-table1", (1, 28, 28), 10, [
        conv(64), conv(64), maxpool(),
        conv(144), conv(144), maxpool(),
        conv(144), conv(256), conv(256),
        flatten(),
        dense(2048), batchnorm(), relu(), dropout(0.5),
        dense(1024), batchnorm(), relu(), dropout(0.5),
        dense(10), relu(), dropout(0.5),
    ])


def cifar_table2() -> NetworkSpec:
    """Six conv layers in three blocks, 32x32 RGB, 10 classes."""
    return NetworkSpec("cifar-table2", (3, 32, 32), 10, [
        conv(64), relu(), batchnorm(),
        conv(64), relu(), maxpool(), dropout(0.5),
        conv(144), relu(), batchnorm(),
        conv(144), relu(), maxpool(), dropout(0.5),
        conv(256), relu(), batchnorm(),
        conv(256), relu(), maxpool(), dropout(0.5),
        flatten(),
        dense(1024), batchnorm(), relu(), dropout(0.5),
        dense(512), batchnorm(), relu(), dropout(0.5),
        dense(10),
    ])


def catdog_table3() -> NetworkSpec:
    """Eleven conv layers over 224x224 RGB input, binary output."""
    return NetworkSpec("catdog-table3", (3, 224, 224), 2, [
        conv(64),
        conv(64), batchnorm(), relu(), maxpool(),
        conv(144), relu(),
        conv(144), batchnorm(), relu(), maxpool(),
        conv(256), relu(),
        conv(256), batchnorm(), relu(), maxpool(),
        conv(256), relu(),
        conv(484), relu(),
        conv(484), batchnorm(), relu(), maxpool(),
        conv(484), relu(),
        conv(484), batchnorm(), relu(), maxpool(),
        flatten(),
        dense(1024), batchnorm(), relu(),
        dense(512), batchnorm(), relu(),
        dense(2),
    ])


PRESETS = {
    "mnist-small": mnist_small,
    "mnist-table1": mnist_table1,
    "cifar-table2": cifar_table2,
    "catdog-table3": catdog_table3,
}


def preset(name: str) -> NetworkSpec:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown architecture {name!r}, expected one of {sorted(PRESETS)}")
