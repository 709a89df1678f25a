"""Federated divide-and-co-training: clusters of S clients jointly train an
S-member ensemble, each sub-model split at a cut layer into a lower portion
(run by the current main client on its own data) and an upper portion (run
by the member that owns that sub-model on the received activations).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..data import ClientData, batch_indices, generate_views
from ..losses import cot_loss_op
from ..nn import NesterovSGD, RngStream, Sequential, Tensor
from ..nn import functional as F
from ..protocol import SERVER, Message, MessageKind, Network
from .config import ClusteringError, RoundConfig, batch_stream, cluster_stream, rotation_stream, step_stream
from .ensemble import EnsembleModel, cluster_aggregate, ensemble_predict, merge_states, split_state
from .models import Architecture


class RoundAborted(RuntimeError):
    """A round could not complete (missing upload, missing prediction, ...)."""


@dataclass
class Cluster:
    members: list[int]
    main_index: int = 0

    @property
    def S(self) -> int:
        return len(self.members)

    @property
    def main(self) -> int:
        return self.members[self.main_index]

    @property
    def head(self) -> int:
        return min(self.members)


def cluster_partition(clients: Sequence[int], S: int, rng: RngStream | None = None) -> list[Cluster]:
    """Shuffle the selected clients and cut them into ``len(clients) / S`` clusters."""
    clients = list(clients)
    if S < 1 or len(clients) % S:
        raise ClusteringError(f"cannot partition K={len(clients)} clients into clusters of S={S}")
    order = rng.permutation(len(clients)) if rng is not None else np.arange(len(clients))
    shuffled = [clients[i] for i in order]
    return [Cluster(shuffled[i : i + S]) for i in range(0, len(shuffled), S)]


@dataclass
class Device:
    """Per-client simulation state during one round."""

    data: ClientData
    upper: Sequential | None = None
    upper_opt: NesterovSGD | None = None
    lower: list[Sequential] | None = None
    lower_opts: list[NesterovSGD] | None = None
    pending: tuple | None = None

    @property
    def id(self) -> int:
        return self.data.client_id


@dataclass
class StepStats:
    ce: list[float] = field(default_factory=list)
    cot: list[float] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)
    mains: list[tuple[int, int]] = field(default_factory=list)


# -- portion packing ---------------------------------------------------------------
class PortionCodec:
    """Turns lower/upper portions into message parts and back, using a
    zero-weight template of the sub-model architecture for shapes."""

    def __init__(self, arch: Architecture, cut: int):
        self.arch, self.cut = arch, cut
        lower, upper = arch.build().split(cut)
        self.lower_shapes = [p.shape for p in lower.parameters()]
        self.upper_shapes = [p.shape for p in upper.parameters()]

    def new_lower(self) -> Sequential:
        return self.arch.build().split(self.cut)[0]

    def new_upper(self) -> Sequential:
        return self.arch.build().split(self.cut)[1]

    @staticmethod
    def pack(portions: Sequence[Sequential]) -> list[np.ndarray]:
        return [p.data for m in portions for p in m.parameters()]

    @staticmethod
    def load(portion: Sequential, parts: Sequence[np.ndarray]) -> Sequential:
        params = portion.parameters()
        if len(params) != len(parts):
            raise RoundAborted(f"portion expects {len(params)} tensors, message carries {len(parts)}")
        for p, value in zip(params, parts):
            if value.shape != p.shape:
                raise RoundAborted(f"parameter {p.id}: received shape {value.shape}, expected {p.shape}")
            p.data = np.array(value, dtype=np.float64)
        return portion

    def lower_ensemble_shapes(self, S: int) -> list[tuple]:
        return self.lower_shapes * S

    def unpack_lower_ensemble(self, msg: Message, S: int) -> list[Sequential]:
        n = len(self.lower_shapes)
        return [self.load(self.new_lower(), msg.parts[k * n : (k + 1) * n]) for k in range(S)]


def _state(portion: Sequential):
    return portion.state_dict()


# -- Alg. procedures --------------------------------------------------------------
def main_device_forward(net: Network, cluster: Cluster, main: Device, x: np.ndarray, y: np.ndarray,
                        step: RngStream, arch: Architecture, cfg: RoundConfig, tag: int = 0) -> list[Tensor]:
    """Run the S lower portions on S augmented views of the batch and send each
    activation to the member owning that sub-model (one stays local)."""
    S = cluster.S
    if main.lower is None or len(main.lower) != S:
        raise RoundAborted(f"main client {main.id} does not hold the lower ensemble")
    views = generate_views(x, S, [step.child("view", k) for k in range(S)], cfg.augment)
    graphs = []
    labels = np.asarray(y, dtype=np.float64)
    for k, member in enumerate(cluster.members):
        a = main.lower[k](Tensor(arch.reshape_input(views[k])), step.child("dropout", k))
        graphs.append(a)
        net.send(Message(MessageKind.SMASHED, main.id, member, [a.data, labels], tag))
    return graphs


def server_objective(probs: Sequence[np.ndarray], ce_values: Sequence[float], lambda_cot: float):
    """Objective value and the co-training gradient w.r.t. each prediction.

    Returns ``(F, cot_value, grads)``; ``grads`` is ``None`` when the
    co-training term is inactive (``lambda_cot == 0`` or ``S == 1``).
    """
    F_value = float(sum(ce_values))
    if lambda_cot == 0 or len(probs) < 2:
        return F_value, 0.0, None
    leaves = [Tensor(p, requires_grad=True) for p in probs]
    weighted = lambda_cot * cot_loss_op(leaves)
    weighted.backward()
    cot_value = weighted.item() / lambda_cot
    return F_value + weighted.item(), cot_value, [leaf.grad for leaf in leaves]


def proxy_devices_update(net: Network, cluster: Cluster, devices: dict[int, Device], step: RngStream,
                         cfg: RoundConfig, lr: float, stats: StepStats | None = None, tag: int = 0) -> None:
    """Every member finishes the forward pass on its upper portion, the server
    combines the predictions, then each member backpropagates, steps its
    upper portion and returns the cut-layer gradient to the main client."""
    main_id = cluster.main
    for k, member in enumerate(cluster.members):
        dev = devices[member]
        msg = net.recv(main_id, member)
        A = Tensor(msg.parts[0], requires_grad=True)
        y = msg.parts[1].astype(np.int64)
        logits = dev.upper(A, step.child("dropout", k))
        ce = F.cross_entropy(logits, y)
        p = F.softmax(logits)
        dev.pending = (A, ce, p)
        net.send(Message(MessageKind.PREDICTION, member, SERVER, [p.data, np.array([ce.item()])], tag))

    probs, ces = [], []
    for member in cluster.members:
        try:
            msg = net.recv(member, SERVER)
        except Exception as exc:
            raise RoundAborted(f"no prediction from client {member}") from exc
        probs.append(msg.parts[0])
        ces.append(float(msg.parts[1][0]))
    F_value, cot_value, grads = server_objective(probs, ces, cfg.lambda_cot)
    if stats is not None:
        stats.ce.append(float(np.mean(ces)))
        stats.cot.append(cot_value)
        stats.objective.append(F_value)
    for k, member in enumerate(cluster.members):
        parts = [np.array([F_value])] + ([grads[k]] if grads is not None else [])
        net.send(Message(MessageKind.LOSS_BROADCAST, SERVER, member, parts, tag))

    for k, member in enumerate(cluster.members):
        dev = devices[member]
        msg = net.recv(SERVER, member)
        A, ce, p = dev.pending
        dev.pending = None
        loss = ce if len(msg.parts) == 1 else ce + (p * Tensor(msg.parts[1])).sum()
        loss.backward()
        dev.upper_opt.lr = lr
        dev.upper_opt.step()
        net.send(Message(MessageKind.CUT_GRADIENT, member, main_id, [A.grad], tag))


def main_device_backprop(net: Network, cluster: Cluster, main: Device, graphs: Sequence[Tensor], lr: float) -> None:
    for k, member in enumerate(cluster.members):
        msg = net.recv(member, main.id)
        grad = msg.parts[0]
        if grad.shape != graphs[k].shape:
            raise RoundAborted(f"cut gradient from client {member} has shape {grad.shape}, "
                               f"smashed data had {graphs[k].shape}")
        graphs[k].backward(grad)
        main.lower_opts[k].lr = lr
        main.lower_opts[k].step()


def _make_opt(portion: Sequential, cfg: RoundConfig, lr: float) -> NesterovSGD:
    return NesterovSGD(portion.parameters(), lr, cfg.momentum, cfg.weight_decay)


def distribute(net: Network, cluster: Cluster, devices: dict[int, Device], states: Sequence,
               codec: PortionCodec, cfg: RoundConfig, lr: float) -> None:
    """Server sends the lower ensemble to the first member and upper portion
    ``i`` to member ``i``."""
    net.set_context(phase="distribute")
    cluster.main_index = 0
    for i, member in enumerate(cluster.members):
        net.set_role(member, "main" if i == 0 else "proxy")
    S = cluster.S
    lowers, uppers = [], []
    for state in states:
        lower_state, upper_state = split_state(state, codec.cut)
        lowers.append(codec.load(codec.new_lower(), list(lower_state.values())))
        uppers.append(codec.load(codec.new_upper(), list(upper_state.values())))
    head = cluster.members[0]
    net.send(Message(MessageKind.LOWER_ENSEMBLE, SERVER, head, codec.pack(lowers)))
    for i, member in enumerate(cluster.members):
        net.send(Message(MessageKind.UPPER_PORTION, SERVER, member, codec.pack([uppers[i]])))

    msg = net.recv(SERVER, head)
    dev = devices[head]
    dev.lower = codec.unpack_lower_ensemble(msg, S)
    dev.lower_opts = [_make_opt(m, cfg, lr) for m in dev.lower]
    for member in cluster.members:
        dev = devices[member]
        dev.upper = codec.load(codec.new_upper(), net.recv(SERVER, member).parts)
        dev.upper_opt = _make_opt(dev.upper, cfg, lr)


def _hand_over(net: Network, cluster: Cluster, devices: dict[int, Device], holder: int, new_main: int,
               codec: PortionCodec, cfg: RoundConfig, lr: float) -> None:
    net.send(Message(MessageKind.LOWER_ENSEMBLE, holder, new_main, codec.pack(devices[holder].lower)))
    devices[holder].lower = None
    devices[holder].lower_opts = None
    dev = devices[new_main]
    dev.lower = codec.unpack_lower_ensemble(net.recv(holder, new_main), cluster.S)
    dev.lower_opts = [_make_opt(m, cfg, lr) for m in dev.lower]


def fed_co_training(net: Network, cluster: Cluster, devices: dict[int, Device], codec: PortionCodec,
                    cfg: RoundConfig, rnd: int, stats: StepStats | None = None,
                    on_phase_end: Callable | None = None):
    """Local epochs of co-training inside one cluster.

    In every epoch each member serves as main client once and runs one pass
    over its own shard; the lower ensemble travels to the next main client
    between phases. Returns the server-side ``(lower states, upper states)``
    received from the final uploads.
    """
    lr = cfg.lr(rnd)
    arch = codec.arch
    holder = cluster.members[0]
    tag = 0
    for epoch in range(cfg.local_epochs):
        if cfg.rotation == "random":
            order = [cluster.members[i] for i in rotation_stream(cfg.seed, rnd, cluster.head, epoch).permutation(cluster.S)]
        else:
            order = list(cluster.members)
        for m in order:
            cluster.main_index = cluster.members.index(m)
            net.set_context(phase=f"main:{m}")
            for member in cluster.members:
                net.set_role(member, "main" if member == m else "proxy")
            if holder != m:
                _hand_over(net, cluster, devices, holder, m, codec, cfg, lr)
                holder = m
            main = devices[m]
            if stats is not None:
                stats.mains.append((epoch, m))
            batches = batch_indices(len(main.data), cfg.batch_size, batch_stream(cfg.seed, rnd, m, epoch))
            for b, idx in enumerate(batches):
                step = step_stream(cfg.seed, rnd, m, epoch, b)
                graphs = main_device_forward(net, cluster, main, main.data.X[idx], main.data.y[idx], step, arch,
                                             cfg, tag)
                proxy_devices_update(net, cluster, devices, step, cfg, lr, stats, tag)
                main_device_backprop(net, cluster, main, graphs, lr)
                tag += 1
            if on_phase_end is not None:
                on_phase_end(epoch, m, [_state(x) for x in devices[holder].lower],
                             [_state(devices[c].upper) for c in cluster.members])

    net.set_context(phase="upload/lower")
    net.set_role(holder, "main")
    net.send(Message(MessageKind.CLUSTER_UPLOAD, holder, SERVER, codec.pack(devices[holder].lower)))
    net.set_context(phase="upload/upper")
    for member in cluster.members:
        net.send(Message(MessageKind.CLUSTER_UPLOAD, member, SERVER, codec.pack([devices[member].upper])))

    try:
        lower_msg = net.recv(holder, SERVER)
        upper_msgs = [net.recv(member, SERVER) for member in cluster.members]
    except Exception as exc:
        raise RoundAborted(f"missing upload from cluster {cluster.members}") from exc
    lowers = codec.unpack_lower_ensemble(lower_msg, cluster.S)
    uppers = [codec.load(codec.new_upper(), msg.parts) for msg in upper_msgs]
    for member in cluster.members:
        devices[member].lower = devices[member].upper = None
    return [_state(m) for m in lowers], [_state(m) for m in uppers]


@dataclass
class RoundResult:
    round: int
    train_loss: float
    cot_loss: float
    objective: float
    bytes_per_client: float
    clusters: list[list[int]]
    wall_time: float


class FedDCTTrainer:
    """Server-side driver: cluster formation, distribution, co-training and
    aggregation, round after round."""

    algorithm = "feddct"

    def __init__(self, arch: Architecture, clients: Sequence[ClientData], cfg: RoundConfig,
                 cut_layer: int | None = None, network: Network | None = None):
        self.cfg = cfg.validate()
        if len(clients) != cfg.n_clients:
            raise ClusteringError(f"config declares K={cfg.n_clients} clients but {len(clients)} were given")
        self.global_arch = arch
        self.arch = arch.divided(cfg.split_factor)
        self.clients = {c.client_id: c for c in clients}
        self.ensemble = EnsembleModel.initialize(self.arch, cfg.split_factor, cfg.seed, cut_layer)
        self.codec = PortionCodec(self.arch, self.ensemble.cut_layer)
        self.net = network if network is not None else Network()
        self.round = 0

    @property
    def cut_layer(self) -> int:
        return self.ensemble.cut_layer

    def run_round(self, on_phase_end: Callable | None = None) -> RoundResult:
        t0 = time.perf_counter()
        rnd, cfg = self.round, self.cfg
        self.net.set_context(round=rnd)
        lr = cfg.lr(rnd)
        clusters = cluster_partition(sorted(self.clients), cfg.split_factor, cluster_stream(cfg.seed, rnd))
        states = self.ensemble.states()
        stats = StepStats()
        uploads = []
        for cluster in clusters:
            devices = {c: Device(self.clients[c]) for c in cluster.members}
            distribute(self.net, cluster, devices, states, self.codec, cfg, lr)
            lowers, uppers = fed_co_training(self.net, cluster, devices, self.codec, cfg, rnd, stats, on_phase_end)
            merged = [merge_states(lowers[k], uppers[k]) for k in range(cluster.S)]
            uploads.append((cluster.head, merged, sum(len(self.clients[c]) for c in cluster.members)))
        uploads.sort(key=lambda u: u[0])
        new_states = cluster_aggregate([u[1] for u in uploads], [u[2] for u in uploads])
        self.ensemble.load_states(new_states)
        if self.net.pending():
            raise RoundAborted(f"{self.net.pending()} undelivered messages at the end of round {rnd}")
        per_client = [self.net.bytes_for(c, round=rnd, include_headers=True) for c in self.clients]
        self.round += 1
        return RoundResult(rnd, float(np.mean(stats.ce)), float(np.mean(stats.cot)), float(np.mean(stats.objective)),
                           float(np.mean(per_client)), [c.members for c in clusters], time.perf_counter() - t0)

    def predict_proba(self, X) -> np.ndarray:
        return ensemble_predict(self.ensemble, X)

    def states(self):
        return self.ensemble.states()
