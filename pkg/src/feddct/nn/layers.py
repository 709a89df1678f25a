"""Layer objects and the :class:`Sequential` container used for every sub-model."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import functional as F
from .rng import RngStream
from .tensor import DTYPE, Tensor


class Parameter(Tensor):
    """Trainable leaf tensor with a stable id and a Nesterov momentum buffer."""

    def __init__(self, data, id: str = ""):
        super().__init__(data, requires_grad=True, name=id)
        self.id = id
        self.momentum_buffer = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter(id={self.id!r}, shape={self.shape})"


class Layer:
    kind = "layer"
    training = True

    def params(self) -> "OrderedDict[str, Parameter]":
        return OrderedDict()

    def forward(self, x: Tensor, rng: RngStream | None = None) -> Tensor:
        raise NotImplementedError

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def config(self) -> dict:
        return {"kind": self.kind}

    def __call__(self, x, rng=None):
        return self.forward(x, rng)

    def __repr__(self) -> str:
        body = ", ".join(f"{k}={v}" for k, v in self.config().items() if k != "kind")
        return f"{type(self).__name__}({body})"


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, out_features: int, bias: bool = True, rng: RngStream | None = None):
        self.in_features, self.out_features = int(in_features), int(out_features)
        std = np.sqrt(2.0 / self.in_features)
        w = rng.normal(0.0, std, (self.in_features, self.out_features)) if rng is not None else np.zeros(
            (self.in_features, self.out_features)
        )
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(self.out_features)) if bias else None

    def params(self):
        out = OrderedDict(weight=self.weight)
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def forward(self, x, rng=None):
        return F.forward_layer("dense", x, self.params(), layer_id=self.weight.id.rsplit(".", 1)[0])

    def output_shape(self, in_shape):
        return (self.out_features,)

    def config(self):
        return {"kind": self.kind, "in_features": self.in_features, "out_features": self.out_features,
                "bias": self.bias is not None}


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, c_in: int, c_out: int, kernel: int = 3, stride: int = 1, padding: int | None = None,
                 groups: int = 1, bias: bool = True, rng: RngStream | None = None):
        self.c_in, self.c_out, self.kernel = int(c_in), int(c_out), int(kernel)
        self.stride, self.groups = int(stride), int(groups)
        self.padding = self.kernel // 2 if padding is None else int(padding)
        if self.c_in % self.groups or self.c_out % self.groups:
            raise ValueError(f"groups={groups} must divide c_in={c_in} and c_out={c_out}")
        shape = (self.c_out, self.c_in // self.groups, self.kernel, self.kernel)
        fan_in = shape[1] * self.kernel * self.kernel
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape) if rng is not None else np.zeros(shape)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(self.c_out)) if bias else None

    def params(self):
        out = OrderedDict(weight=self.weight)
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def forward(self, x, rng=None):
        return F.forward_layer("conv2d", x, self.params(), stride=self.stride, padding=self.padding,
                               groups=self.groups, layer_id=self.weight.id.rsplit(".", 1)[0])

    def output_shape(self, in_shape):
        _, h, w = in_shape
        ho = (h + 2 * self.padding - self.kernel) // self.stride + 1
        wo = (w + 2 * self.padding - self.kernel) // self.stride + 1
        return (self.c_out, ho, wo)

    def config(self):
        return {"kind": self.kind, "c_in": self.c_in, "c_out": self.c_out, "kernel": self.kernel,
                "stride": self.stride, "padding": self.padding, "groups": self.groups,
                "bias": self.bias is not None}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, rng=None):
        return F.relu(x)


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, rng=None):
        return F.softmax(x)


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, p: float = 0.5):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = float(p)

    def forward(self, x, rng=None):
        return F.dropout(x, self.p, rng, training=self.training)

    def config(self):
        return {"kind": self.kind, "p": self.p}


class AvgPool2d(Layer):
    kind = "pool"

    def __init__(self, kernel: int = 2):
        self.kernel = int(kernel)

    def forward(self, x, rng=None):
        return F.avg_pool2d(x, self.kernel)

    def output_shape(self, in_shape):
        c, h, w = in_shape
        return (c, h // self.kernel, w // self.kernel)

    def config(self):
        return {"kind": self.kind, "kernel": self.kernel}


class GlobalAvgPool(Layer):
    kind = "global_pool"

    def forward(self, x, rng=None):
        return F.global_avg_pool(x)

    def output_shape(self, in_shape):
        return (in_shape[0],)


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, rng=None):
        return F.flatten(x)

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


_LAYER_TYPES = {cls.kind: cls for cls in (Dense, Conv2d, ReLU, Softmax, Dropout, AvgPool2d, GlobalAvgPool, Flatten)}


def layer_from_config(cfg: dict) -> Layer:
    cfg = dict(cfg)
    cls = _LAYER_TYPES[cfg.pop("kind")]
    return cls(**cfg)


class Sequential:
    """Ordered stack of layers.

    Parameter ids are ``"<layer index>.<name>"`` using the index in the full
    model, so the lower and upper portions produced by :meth:`split` keep the
    ids they had before the split. ``offset`` records the index of the first
    layer of a portion.
    """

    def __init__(self, layers, offset: int = 0):
        self.layers = list(layers)
        self.offset = int(offset)
        seen = set()
        for i, layer in enumerate(self.layers):
            for name, p in layer.params().items():
                p.id = p.name = f"{self.offset + i}.{name}"
                if p.id in seen:
                    raise ValueError(f"duplicate parameter id {p.id}")
                seen.add(p.id)

    def __len__(self) -> int:
        return len(self.layers)

    def __call__(self, x, rng: RngStream | None = None) -> Tensor:
        return self.forward(x, rng)

    def forward(self, x, rng: RngStream | None = None) -> Tensor:
        for i, layer in enumerate(self.layers):
            sub = rng.child("layer", self.offset + i) if (rng is not None and layer.kind == "dropout") else None
            x = layer.forward(x, sub)
        return x

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.params().values()]

    def named_parameters(self) -> "OrderedDict[str, Parameter]":
        return OrderedDict((p.id, p) for p in self.parameters())

    def n_params(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def train(self, mode: bool = True) -> "Sequential":
        for layer in self.layers:
            layer.training = mode
        return self

    def eval(self) -> "Sequential":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((p.id, p.data.copy()) for p in self.parameters())

    def load_state_dict(self, state, strict: bool = True) -> None:
        params = self.named_parameters()
        if strict and set(state) != set(params):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for pid, value in state.items():
            if pid not in params:
                continue
            value = np.asarray(value, dtype=DTYPE)
            if value.shape != params[pid].shape:
                raise ValueError(f"parameter {pid}: shape {value.shape} != {params[pid].shape}")
            params[pid].data = value.copy()

    def config(self) -> list[dict]:
        return [layer.config() for layer in self.layers]

    def clone(self) -> "Sequential":
        """Deep copy with fresh parameter objects and zeroed optimizer state."""
        twin = Sequential([layer_from_config(c) for c in self.config()], offset=self.offset)
        twin.load_state_dict(self.state_dict())
        for a, b in zip(self.layers, twin.layers):
            b.training = a.training
        return twin

    def split(self, cut: int) -> tuple["Sequential", "Sequential"]:
        """Layer-wise split into ``(layers[:cut], layers[cut:])``; parameters are shared."""
        if not 1 <= cut < len(self.layers):
            raise ValueError(f"cut layer {cut} out of range [1, {len(self.layers) - 1}]")
        lower = Sequential.__new__(Sequential)
        lower.layers, lower.offset = self.layers[:cut], self.offset
        upper = Sequential.__new__(Sequential)
        upper.layers, upper.offset = self.layers[cut:], self.offset + cut
        return lower, upper

    @staticmethod
    def merge(lower: "Sequential", upper: "Sequential") -> "Sequential":
        if upper.offset != lower.offset + len(lower.layers):
            raise ValueError(f"portions are not adjacent: lower ends at {lower.offset + len(lower)}, "
                             f"upper starts at {upper.offset}")
        merged = Sequential.__new__(Sequential)
        merged.layers, merged.offset = lower.layers + upper.layers, lower.offset
        return merged

    def output_shape(self, in_shape) -> tuple[int, ...]:
        shape = tuple(in_shape)
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def __repr__(self) -> str:
        inner = "\n".join(f"  ({self.offset + i}) {layer!r}" for i, layer in enumerate(self.layers))
        return f"Sequential(\n{inner}\n)"
