"""Channel-wise S-way division of layers and model specs.

Width rule: ``c' = max(1, round_half_up(c / sqrt(S)))``. Dividing both the
input and output channels by ``sqrt(S)`` divides a layer's parameter count by
``S``. Architecture-level rules (widen factor, cardinality, growth rate) and
the published ResNet stage widths live here as well.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path


class NonTabulatedWarning(UserWarning):
    """A width table was requested for a split factor with no published row."""


@dataclass(frozen=True)
class LayerSpec:
    """Symbolic conv/dense layer: ``kernel x kernel``, ``groups`` and output map size.

    A dense layer is a 1x1 convolution on a 1x1 map. ``divide_in`` /
    ``divide_out`` mark channel counts fixed by the data (input channels,
    class count) that division must leave alone.
    """

    kernel: int
    c_in: int
    c_out: int
    groups: int = 1
    out_h: int = 1
    out_w: int = 1
    kind: str = "conv"
    name: str = ""
    divide_in: bool = True
    divide_out: bool = True

    def __post_init__(self):
        for attr in ("kernel", "c_in", "c_out", "groups", "out_h", "out_w"):
            if int(getattr(self, attr)) < 1:
                raise ValueError(f"LayerSpec.{attr} must be >= 1, got {getattr(self, attr)}")
        if self.c_in % self.groups or self.c_out % self.groups:
            raise ValueError(f"groups={self.groups} must divide c_in={self.c_in} and c_out={self.c_out}")

    @property
    def channel_ratio(self) -> float:
        return self.c_out / self.c_in


@dataclass(frozen=True)
class RegularizationSpec:
    dropout_p: float = 0.0
    stochastic_depth_p: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self):
        for attr in ("dropout_p", "stochastic_depth_p"):
            v = getattr(self, attr)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{attr} must be in [0, 1), got {v}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")


@dataclass
class ModelSpec:
    layers: list[LayerSpec]
    name: str = "model"
    family: str = "generic"

    def __len__(self):
        return len(self.layers)


@dataclass
class DivisionPlan:
    split_factor: int
    per_layer: list[tuple[LayerSpec, LayerSpec]] = field(default_factory=list)
    rounding: str = "nearest, half up, clamp >= 1"

    @property
    def original(self) -> ModelSpec:
        return ModelSpec([a for a, _ in self.per_layer])

    @property
    def divided(self) -> ModelSpec:
        return ModelSpec([b for _, b in self.per_layer])


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def divide_width(c: int, S: int) -> int:
    if S <= 1:
        return int(c)
    return max(1, round_half_up(c / math.sqrt(S)))


def _fit_groups(groups: int, c_in: int, c_out: int, depthwise: bool) -> int:
    if depthwise:
        return c_in if c_out % c_in == 0 else math.gcd(c_in, c_out)
    g = min(groups, c_in)
    common = math.gcd(c_in, c_out)
    while common % g:
        g -= 1
    return g


def divide_layer(layer: LayerSpec, S: int) -> LayerSpec:
    """Divide the channel widths of one layer by ``sqrt(S)``; kernel and map size stay."""
    if S <= 1:
        return layer
    c_in = divide_width(layer.c_in, S) if layer.divide_in else layer.c_in
    c_out = divide_width(layer.c_out, S) if layer.divide_out else layer.c_out
    depthwise = layer.groups > 1 and layer.groups == layer.c_in
    groups = _fit_groups(layer.groups, c_in, c_out, depthwise) if layer.groups > 1 else 1
    return replace(layer, c_in=c_in, c_out=c_out, groups=groups)


def divide_model(spec: ModelSpec, S: int) -> DivisionPlan:
    return DivisionPlan(S, [(layer, divide_layer(layer, S)) for layer in spec.layers])


def scale_regularization(reg: RegularizationSpec, S: int) -> RegularizationSpec:
    """Divide dropout and stochastic-depth drop probabilities by ``sqrt(S)``; keep weight decay."""
    if S <= 1:
        return reg
    root = math.sqrt(S)
    return replace(reg, dropout_p=reg.dropout_p / root, stochastic_depth_p=reg.stochastic_depth_p / root)


def widen_factor_divide(f_w: float, S: int) -> float:
    return max(math.floor(f_w / math.sqrt(S) + 0.4), 1.0)


def cardinality_divide(f_c: int, S: int) -> int:
    return max(f_c // S, 1)


def growth_rate_divide(f_g: int, S: int) -> float:
    return 0.5 * math.floor(2 * f_g / math.sqrt(S))


RESNET_BASELINE = (16, 32, 64)

# Published stage widths; S=2 and S=8 are not reproduced by the generic rule
# (e.g. 16/sqrt(2) -> 11, table says 12), so they are kept verbatim.
RESNET_STAGE_TABLE = {
    1: (16, 32, 64),
    2: (12, 24, 48),
    4: (8, 16, 32),
    8: (6, 12, 23),
    16: (4, 8, 16),
    32: (3, 6, 12),
}

# Hand-tuned first-layer channel counts; reference fixture only.
EFFICIENTNET_TABLE = {
    1: (32, 16, 24, 40, 80, 112, 192, 320, 1280),
    2: (24, 12, 16, 24, 56, 80, 136, 224, 920),
    4: (16, 12, 16, 20, 40, 56, 96, 160, 640),
}


def resnet_stage_table(S: int) -> list[int]:
    if S in RESNET_STAGE_TABLE:
        return list(RESNET_STAGE_TABLE[S])
    warnings.warn(f"no published ResNet row for S={S}; using the generic width rule", NonTabulatedWarning,
                  stacklevel=2)
    return [divide_width(c, S) for c in RESNET_BASELINE]


# -- declarative model specs -----------------------------------------------------
def model_spec_from_dict(doc: dict) -> ModelSpec:
    """Build a :class:`ModelSpec` from a JSON-compatible mapping.

    Either ``{"layers": [{"kind", "kernel", "c_in", "c_out", "groups", ...}]}``
    or ``{"family": "resnet_stages", "widths": [16, 32, 64]}``.
    """
    family = doc.get("family", "generic")
    name = doc.get("name", family)
    if family == "resnet_stages":
        widths = [int(w) for w in doc.get("widths", RESNET_BASELINE)]
        layers = [LayerSpec(kernel=3, c_in=w, c_out=w, name=f"stage{i + 1}") for i, w in enumerate(widths)]
        return ModelSpec(layers, name=name, family=family)
    allowed = {f for f in LayerSpec.__dataclass_fields__}
    layers = []
    for i, rec in enumerate(doc["layers"]):
        unknown = set(rec) - allowed
        if unknown:
            raise ValueError(f"layer {i}: unknown keys {sorted(unknown)}")
        rec = dict(rec)
        rec.setdefault("name", f"layer{i}")
        if rec.get("kind", "conv") == "dense":
            rec.setdefault("kernel", 1)
        layers.append(LayerSpec(**rec))
    return ModelSpec(layers, name=name, family=family)


def load_model_spec(path) -> ModelSpec:
    return model_spec_from_dict(json.loads(Path(path).read_text()))


def division_report(spec: ModelSpec, S: int) -> dict:
    """Structured per-layer and total report used by the ``divide`` command."""
    from . import costs

    plan = divide_model(spec, S)
    rows = []
    for orig, div in plan.per_layer:
        rows.append(
            {
                "name": orig.name,
                "kind": orig.kind,
                "kernel": orig.kernel,
                "c_in": [orig.c_in, div.c_in],
                "c_out": [orig.c_out, div.c_out],
                "groups": [orig.groups, div.groups],
                "params": [costs.count_params(orig), costs.count_params(div)],
                "flops": [costs.count_flops(orig), costs.count_flops(div)],
            }
        )
    p0 = sum(r["params"][0] for r in rows)
    p1 = sum(r["params"][1] for r in rows)
    report = {
        "model": spec.name,
        "family": spec.family,
        "split_factor": S,
        "layers": rows,
        "total_params": [p0, p1],
        "param_ratio": (p1 / p0) if p0 else None,
        "ensemble_params": p1 * S,
    }
    if spec.family == "resnet_stages":
        widths = [layer.c_in for layer in spec.layers]
        if tuple(widths) == RESNET_BASELINE:
            tabulated = S in RESNET_STAGE_TABLE
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", NonTabulatedWarning)
                report["stage_widths"] = resnet_stage_table(S)
            report["tabulated"] = tabulated
        else:
            report["stage_widths"] = [divide_width(w, S) for w in widths]
            report["tabulated"] = False
    return report


def plan_to_json(plan: DivisionPlan) -> str:
    return json.dumps(
        {"split_factor": plan.split_factor, "rounding": plan.rounding,
         "per_layer": [[asdict(a), asdict(b)] for a, b in plan.per_layer]},
        indent=2,
    )
