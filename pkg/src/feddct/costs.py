"""Parameter, FLOP, memory and communication accounting.

All sizes are in bytes at 8 bytes per element (the engine is float64).
Communication formulas take ``p`` as the total number of training samples
across the ``K`` clients and ``Q`` as the smashed-layer size in bytes per
sample for the whole ensemble, so ``(p / K) * (Q / S)`` is the bytes of one
sub-model's activations for one client's data.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Iterable

from .division import LayerSpec, ModelSpec

BYTES_PER_ELEMENT = 8


@dataclass
class CostLedger:
    params: int = 0
    flops: int = 0
    mem_model: int = 0
    mem_optimizer: int = 0
    mem_activation: int = 0
    bytes_up: int = 0
    bytes_down: int = 0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"CostLedger.{f.name} must be nonnegative")

    def __add__(self, other: "CostLedger") -> "CostLedger":
        return CostLedger(**{f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)})

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def mem_total(self) -> int:
        return self.mem_model + self.mem_optimizer + self.mem_activation


def count_params(layer: LayerSpec) -> int:
    """``M^2 * (C_in/d) * (C_out/d) * d``; bias is not counted."""
    d = layer.groups
    return layer.kernel**2 * (layer.c_in // d) * (layer.c_out // d) * d


def count_flops(layer: LayerSpec) -> int:
    """``(2 * M^2 * C_in/d - 1) * H * W * C_out``."""
    return (2 * layer.kernel**2 * (layer.c_in // layer.groups) - 1) * layer.out_h * layer.out_w * layer.c_out


def _layers(spec) -> list[LayerSpec]:
    if isinstance(spec, ModelSpec):
        return spec.layers
    return list(spec)


def memory_estimate(spec: ModelSpec | Iterable[LayerSpec], batch: int = 1) -> CostLedger:
    """Model, optimizer (one momentum buffer) and activation memory in bytes."""
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    layers = _layers(spec)
    params = sum(count_params(layer) for layer in layers)
    activations = sum(layer.c_out * layer.out_h * layer.out_w for layer in layers)
    return CostLedger(
        params=params,
        flops=sum(count_flops(layer) for layer in layers),
        mem_model=BYTES_PER_ELEMENT * params,
        mem_optimizer=BYTES_PER_ELEMENT * params,
        mem_activation=BYTES_PER_ELEMENT * batch * activations,
    )


@dataclass(frozen=True)
class CommParams:
    S: int
    K: int
    p: float
    Q: float
    beta: float
    w_size: float

    def __post_init__(self):
        if self.S < 2:
            raise ValueError(f"communication formulas need S >= 2, got S={self.S}")
        if self.K % self.S:
            raise ValueError(f"K={self.K} is not divisible by S={self.S}")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must be in (0, 1), got {self.beta}")
        if min(self.p, self.Q, self.w_size) < 0:
            raise ValueError("p, Q and w_size must be nonnegative")


def comm_cost_main(c: CommParams) -> float:
    return (c.S - 1) * (2 * c.p / c.K) * (c.Q / c.S) + 2 * c.beta * c.w_size + 2 * (1 - c.beta) * c.w_size / c.S


def comm_cost_proxy(c: CommParams) -> float:
    return (2 * c.p / c.K) * (c.Q / c.S) + 2 * (1 - c.beta) * c.w_size / c.S


def comm_cost_total(c: CommParams) -> float:
    return (c.S - 1) * (4 * c.p / c.K) * (c.Q / c.S) + 2 * c.w_size


def fedavg_comm_cost(w_size: float) -> float:
    """Per-client bytes per round for FedAvg: one download and one upload."""
    return 2 * w_size


def cost_table(spec: ModelSpec | Iterable[LayerSpec]) -> list[dict]:
    rows = []
    for layer in _layers(spec):
        rows.append({"name": layer.name, "kind": layer.kind, "kernel": layer.kernel, "c_in": layer.c_in,
                     "c_out": layer.c_out, "groups": layer.groups, "out": [layer.out_h, layer.out_w],
                     "params": count_params(layer), "flops": count_flops(layer)})
    return rows
