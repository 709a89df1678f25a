"""Federated averaging baseline driven over the same transport and random
streams as the co-training engine, so the two can be compared step for step."""

from __future__ import annotations

import time
from typing import Sequence

import numpy as np

from ..data import ClientData, batch_indices, generate_views
from ..nn import NesterovSGD, Sequential, Tensor
from ..nn import functional as F
from ..protocol import SERVER, Message, MessageKind, Network
from .config import RoundConfig, batch_stream, step_stream
from .ensemble import weighted_average
from .feddct import RoundAborted, RoundResult
from .models import Architecture, build_sub_models


def local_sgd(model: Sequential, client: ClientData, arch: Architecture, cfg: RoundConfig, rnd: int) -> list[float]:
    """``E`` epochs of minibatch Nesterov SGD on one shard; returns batch losses.

    Uses view 0 and dropout stream 0 of each step, which is exactly what a
    single-member cluster draws.
    """
    lr = cfg.lr(rnd)
    opt = NesterovSGD(model.parameters(), lr, cfg.momentum, cfg.weight_decay)
    losses = []
    for epoch in range(cfg.local_epochs):
        batches = batch_indices(len(client), cfg.batch_size, batch_stream(cfg.seed, rnd, client.client_id, epoch))
        for b, idx in enumerate(batches):
            step = step_stream(cfg.seed, rnd, client.client_id, epoch, b)
            x = generate_views(client.X[idx], 1, [step.child("view", 0)], cfg.augment)[0]
            logits = model(Tensor(arch.reshape_input(x)), step.child("dropout", 0))
            loss = F.cross_entropy(logits, client.y[idx])
            loss.backward()
            opt.step()
            losses.append(loss.item())
    return losses


def fedavg_round(net: Network, clients: Sequence[ClientData], global_state, arch: Architecture,
                 cfg: RoundConfig, rnd: int) -> tuple[list, list[float]]:
    """Broadcast, local training, upload and weighted averaging."""
    template = arch.build()
    shapes = [p.shape for p in template.parameters()]
    net.set_context(round=rnd, phase="distribute")
    for c in clients:
        net.set_role(c.client_id, "client")
        net.send(Message(MessageKind.GLOBAL_MODEL, SERVER, c.client_id, list(global_state.values())))
    updates, losses = [], []
    for c in clients:
        net.set_context(phase=f"local:{c.client_id}")
        msg = net.recv(SERVER, c.client_id)
        if [p.shape for p in msg.parts] != shapes:
            raise RoundAborted(f"client {c.client_id} received a malformed global model")
        model = arch.build()
        model.load_state_dict(dict(zip(global_state.keys(), msg.parts)))
        losses.extend(local_sgd(model, c, arch, cfg, rnd))
        net.send(Message(MessageKind.CLIENT_UPDATE, c.client_id, SERVER, [p.data for p in model.parameters()]))
    net.set_context(phase="aggregate")
    for c in clients:
        try:
            msg = net.recv(c.client_id, SERVER)
        except Exception as exc:
            raise RoundAborted(f"missing update from client {c.client_id}") from exc
        updates.append(dict(zip(global_state.keys(), msg.parts)))
    return weighted_average(updates, [len(c) for c in clients]), losses


class FedAvgTrainer:
    """All ``K`` clients train the full (undivided) model every round."""

    algorithm = "fedavg"

    def __init__(self, arch: Architecture, clients: Sequence[ClientData], cfg: RoundConfig,
                 network: Network | None = None):
        self.cfg = cfg
        if len(clients) != cfg.n_clients:
            raise ValueError(f"config declares K={cfg.n_clients} clients but {len(clients)} were given")
        self.arch = arch
        self.clients = sorted(clients, key=lambda c: c.client_id)
        self.model = build_sub_models(arch, 1, cfg.seed)[0]
        self.net = network if network is not None else Network()
        self.round = 0

    def run_round(self, on_phase_end=None) -> RoundResult:
        t0 = time.perf_counter()
        rnd = self.round
        state, losses = fedavg_round(self.net, self.clients, self.model.state_dict(), self.arch, self.cfg, rnd)
        self.model.load_state_dict(state)
        per_client = [self.net.bytes_for(c.client_id, round=rnd, include_headers=True) for c in self.clients]
        self.round += 1
        return RoundResult(rnd, float(np.mean(losses)), 0.0, float(np.mean(losses)), float(np.mean(per_client)),
                           [[c.client_id] for c in self.clients], time.perf_counter() - t0)

    def predict_proba(self, X) -> np.ndarray:
        self.model.eval()
        try:
            logits = self.model(Tensor(self.arch.reshape_input(X)))
        finally:
            self.model.train()
        return F.softmax(logits).data

    def states(self):
        return [self.model.state_dict()]
