"""Desk-scale, normalization-free model family: a width-configurable MLP and
a small three-block CNN (``dctnet``)."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..division import LayerSpec, ModelSpec, RegularizationSpec, divide_width, scale_regularization
from ..nn import AvgPool2d, Conv2d, Dense, Dropout, GlobalAvgPool, ReLU, RngStream, Sequential

ARCH_KINDS = ("mlp", "dctnet")


@dataclass(frozen=True)
class Architecture:
    """Shape of one (sub-)model.

    ``widths`` are the hidden widths (mlp) or per-block channel counts
    (dctnet). The data-facing input size and the class count are never
    divided.
    """

    kind: str
    input_shape: tuple[int, ...]
    n_classes: int
    widths: tuple[int, ...] = (128, 128)
    dropout: float = 0.0

    def __post_init__(self):
        if self.kind not in ARCH_KINDS:
            raise ValueError(f"unknown architecture {self.kind!r}; expected one of {ARCH_KINDS}")
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.kind == "dctnet" and len(self.input_shape) != 3:
            raise ValueError(f"dctnet needs a (channels, height, width) input shape, got {self.input_shape}")
        if not self.widths:
            raise ValueError("at least one hidden width is required")

    def divided(self, S: int) -> "Architecture":
        reg = scale_regularization(RegularizationSpec(dropout_p=self.dropout), S)
        return replace(self, widths=tuple(divide_width(w, S) for w in self.widths), dropout=reg.dropout_p)

    @property
    def flat_input(self) -> int:
        return int(np.prod(self.input_shape))

    def reshape_input(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return X.reshape((X.shape[0],) + self.input_shape)

    def _blocks(self) -> list[list]:
        """Layer groups; a block boundary is a valid cut point."""
        blocks = []
        if self.kind == "mlp":
            prev = self.flat_input
            for i, w in enumerate(self.widths):
                block = [Dense(prev, w), ReLU()]
                if self.dropout > 0 and i > 0:
                    block.insert(0, Dropout(self.dropout))
                blocks.append(block)
                prev = w
            head = [Dense(prev, self.n_classes)]
            if self.dropout > 0:
                head.insert(0, Dropout(self.dropout))
            blocks.append(head)
        else:
            c, h, _ = self.input_shape
            prev = c
            for i, w in enumerate(self.widths):
                block = [Conv2d(prev, w, kernel=3), ReLU()]
                if i < len(self.widths) - 1 and h >= 2:
                    block.append(AvgPool2d(2))
                    h //= 2
                blocks.append(block)
                prev = w
            head = [GlobalAvgPool()]
            if self.dropout > 0:
                head.append(Dropout(self.dropout))
            head.append(Dense(prev, self.n_classes))
            blocks.append(head)
        return blocks

    def build(self, rng: RngStream | None = None) -> Sequential:
        """Instantiate the model; ``rng=None`` gives zero weights (a template)."""
        layers = [layer for block in self._blocks() for layer in block]
        if rng is not None:
            for i, layer in enumerate(layers):
                if isinstance(layer, (Dense, Conv2d)):
                    fresh = type(layer)(**{k: v for k, v in layer.config().items() if k not in ("kind",)},
                                        rng=rng.child("layer", i))
                    layers[i] = fresh
        return Sequential(layers)

    def default_cut(self) -> int:
        """End of the first block: a shallow lower portion."""
        return len(self._blocks()[0])

    def n_layers(self) -> int:
        return sum(len(b) for b in self._blocks())

    def layer_specs(self) -> ModelSpec:
        """Symbolic specs of the weight layers for cost accounting."""
        model = self.build()
        specs, shape = [], self.input_shape if self.kind == "dctnet" else (self.flat_input,)
        weight_layers = [layer for layer in model.layers if isinstance(layer, (Dense, Conv2d))]
        for layer in model.layers:
            out = layer.output_shape(shape)
            if isinstance(layer, (Dense, Conv2d)):
                first, last = layer is weight_layers[0], layer is weight_layers[-1]
                if isinstance(layer, Dense):
                    spec = LayerSpec(kernel=1, c_in=layer.in_features, c_out=layer.out_features, kind="dense",
                                     name=f"dense{len(specs)}", divide_in=not first, divide_out=not last)
                else:
                    spec = LayerSpec(kernel=layer.kernel, c_in=layer.c_in, c_out=layer.c_out, groups=layer.groups,
                                     out_h=out[1], out_w=out[2], kind="conv", name=f"conv{len(specs)}",
                                     divide_in=not first, divide_out=not last)
                specs.append(spec)
            shape = out
        return ModelSpec(specs, name=f"{self.kind}{list(self.widths)}", family=self.kind)

    def activation_elements(self, cut: int) -> int:
        """Per-sample element count of the activation leaving layer ``cut``."""
        model = self.build()
        shape = self.input_shape if self.kind == "dctnet" else (self.flat_input,)
        lower, _ = model.split(cut)
        return int(np.prod(lower.output_shape(shape)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "input_shape": list(self.input_shape), "n_classes": self.n_classes,
                "widths": list(self.widths), "dropout": self.dropout}


def build_sub_models(arch: Architecture, S: int, seed: int) -> list[Sequential]:
    """``S`` sub-models with independent initializations keyed by sub-model index."""
    return [arch.build(RngStream(seed, f"init/sub{k}")) for k in range(S)]
