"""Ensemble of S sub-models, cut-layer split/merge, inference and aggregation."""

from __future__ import annotations

from collections import OrderedDict
from typing import Mapping, Sequence

import numpy as np

from ..nn import Sequential, Tensor
from ..nn import functional as F
from .models import Architecture, build_sub_models

State = "OrderedDict[str, np.ndarray]"


def split_at_cut(model: Sequential, cut: int) -> tuple[Sequential, Sequential]:
    """Lower portion ``layers[:cut]`` and upper portion ``layers[cut:]`` (shared parameters)."""
    return model.split(cut)


def merge(lower: Sequential, upper: Sequential) -> Sequential:
    return Sequential.merge(lower, upper)


def split_state(state: Mapping[str, np.ndarray], cut: int) -> tuple[State, State]:
    lower, upper = OrderedDict(), OrderedDict()
    for pid, value in state.items():
        (lower if int(pid.split(".", 1)[0]) < cut else upper)[pid] = value
    return lower, upper


def merge_states(lower: Mapping[str, np.ndarray], upper: Mapping[str, np.ndarray]) -> State:
    out = OrderedDict(lower)
    for pid, value in upper.items():
        if pid in out:
            raise ValueError(f"parameter {pid} present in both portions")
        out[pid] = value
    return out


class EnsembleModel:
    """``S`` structurally identical sub-models sharing one cut layer."""

    def __init__(self, sub_models: Sequence[Sequential], cut_layer: int, arch: Architecture):
        if not sub_models:
            raise ValueError("an ensemble needs at least one sub-model")
        configs = {repr(m.config()) for m in sub_models}
        if len(configs) != 1:
            raise ValueError("sub-models must share one architecture")
        if not 1 <= cut_layer < len(sub_models[0]):
            raise ValueError(f"cut layer {cut_layer} out of range [1, {len(sub_models[0]) - 1}]")
        self.sub_models = list(sub_models)
        self.cut_layer = int(cut_layer)
        self.arch = arch

    @classmethod
    def initialize(cls, arch: Architecture, S: int, seed: int, cut_layer: int | None = None) -> "EnsembleModel":
        cut = arch.default_cut() if cut_layer is None else cut_layer
        return cls(build_sub_models(arch, S, seed), cut, arch)

    @property
    def split_factor(self) -> int:
        return len(self.sub_models)

    def lower(self, k: int) -> Sequential:
        return self.sub_models[k].split(self.cut_layer)[0]

    def upper(self, k: int) -> Sequential:
        return self.sub_models[k].split(self.cut_layer)[1]

    def states(self) -> list[State]:
        return [m.state_dict() for m in self.sub_models]

    def load_states(self, states: Sequence[Mapping[str, np.ndarray]]) -> None:
        for model, state in zip(self.sub_models, states, strict=True):
            model.load_state_dict(state)

    def n_params(self) -> int:
        return sum(m.n_params() for m in self.sub_models)

    def logits(self, X) -> list[np.ndarray]:
        x = self.arch.reshape_input(X)
        outs = []
        for m in self.sub_models:
            m.eval()
            outs.append(m(Tensor(x)).data)
            m.train()
        return outs

    def predict_proba(self, X) -> np.ndarray:
        return ensemble_predict(self, X)


def ensemble_predict(ensemble: EnsembleModel, X) -> np.ndarray:
    """Softmax of the mean of the sub-models' pre-softmax outputs."""
    logits = ensemble.logits(X)
    mean = logits[0].copy()
    for z in logits[1:]:
        mean = mean + z
    mean = mean / len(logits)
    return F.softmax(Tensor(mean)).data


def weighted_average(states: Sequence[Mapping[str, np.ndarray]], counts: Sequence[float]) -> State:
    """``sum_i (n_i / N) * state_i``, accumulated in the given order."""
    if not states:
        raise ValueError("nothing to aggregate")
    if len(states) != len(counts):
        raise ValueError(f"{len(states)} models but {len(counts)} sample counts")
    total = float(sum(counts))
    if total <= 0:
        raise ValueError("sample counts must sum to a positive number")
    keys = list(states[0])
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for key in keys:
        acc = None
        for state, n in zip(states, counts):
            if key not in state:
                raise KeyError(f"parameter {key} missing from an upload")
            term = (n / total) * state[key]
            acc = term if acc is None else acc + term
        out[key] = acc
    return out


def cluster_aggregate(cluster_models: Sequence[Sequence[Mapping[str, np.ndarray]]],
                      sample_counts: Sequence[int]) -> list[State]:
    """Weighted average of per-cluster ensembles, sub-model by sub-model.

    ``cluster_models[c][k]`` is the merged state of sub-model ``k`` of cluster
    ``c``; ``sample_counts[c]`` is the cluster's sample count.
    """
    if not cluster_models:
        raise ValueError("no cluster uploads")
    S = len(cluster_models[0])
    if any(len(c) != S for c in cluster_models):
        raise ValueError("every cluster must upload all S sub-models")
    return [weighted_average([c[k] for c in cluster_models], sample_counts) for k in range(S)]
