import json
import struct

import numpy as np
import pytest

from feddct.data import make_clients, partition_iid, synth_blobs
from feddct.orchestration import Architecture, FedDCTTrainer, RoundConfig
from feddct.protocol import (HEADER_SIZE, SERVER, Channel, DeadlockError, Message, MessageKind, Network,
                             ProtocolError, deserialize, measure_bytes, serialize)


def _msg(*parts, kind=MessageKind.SMASHED, sender=0, receiver=1, tag=0):
    return Message(kind, sender, receiver, list(parts), tag)


def test_round_trip_bit_exact():
    a = np.random.default_rng(0).normal(size=(3, 4))
    ch = Channel(0, 1)
    ch.send(_msg(a, np.arange(3.0)))
    got = ch.recv()
    assert got.parts[0].tobytes() == a.tobytes() and got.kind is MessageKind.SMASHED


def test_fifo_order():
    ch = Channel(2, 5)
    for t in range(3):
        ch.send(_msg(np.full(2, t), kind=MessageKind.CUT_GRADIENT, sender=2, receiver=5, tag=t))
    assert [ch.recv().tag for _ in range(3)] == [0, 1, 2]


def test_deadlock_names_waiting_node():
    with pytest.raises(DeadlockError, match="node 7"):
        Channel(3, 7).recv()


def test_measured_sizes():
    assert measure_bytes(_msg(kind=MessageKind.LOSS_BROADCAST)) == HEADER_SIZE == 32
    assert measure_bytes(_msg(np.zeros(100), kind=MessageKind.CUT_GRADIENT)) == 32 + 800


def test_serialize_deserialize_serialize_identical():
    m = _msg(np.linspace(0, 1, 12).reshape(3, 4), np.array([1.0, 0.0, 2.0]), tag=9)
    frame = serialize(m)
    assert len(frame) == measure_bytes(m)
    assert serialize(deserialize(frame, m.shapes)) == frame


def test_wire_header_layout():
    frame = serialize(Message(MessageKind.PREDICTION, 3, SERVER, [np.array([0.25, 0.75])], tag=4))
    magic, version, kind, sender, receiver, tag, count = struct.unpack_from("<2sBBiiIQ", frame, 0)
    assert (magic, version, kind, sender, receiver, tag, count) == (b"FD", 1, 4, 3, -1, 4, 2)
    assert np.frombuffer(frame[32:], "<f8").tolist() == [0.25, 0.75]


def test_shape_digest_checked():
    m = _msg(np.zeros((2, 3)), np.zeros(2))
    with pytest.raises(ProtocolError, match="digest"):
        deserialize(serialize(m), [(3, 2), (2,)])


def test_smashed_and_labels_batch_must_agree():
    with pytest.raises(ProtocolError):
        _msg(np.zeros((4, 2)), np.zeros(3))


def test_role_check_blocks_lower_ensemble_to_proxy():
    net = Network()
    net.set_role(1, "proxy")
    with pytest.raises(ProtocolError, match="LOWER_ENSEMBLE"):
        net.send(Message(MessageKind.LOWER_ENSEMBLE, SERVER, 1, [np.zeros(3)]))


def test_loopback_not_counted():
    net = Network()
    net.set_role(0, "main")
    net.send(_msg(np.zeros((2, 2)), np.zeros(2), sender=0, receiver=0))
    assert net.totals() == (0, 0)
    assert net.recv(0, 0).parts[0].shape == (2, 2)


@pytest.fixture(scope="module")
def one_round(tmp_path_factory):
    ds = synth_blobs(160, 4, 8, seed=1)
    clients = make_clients(ds, partition_iid(ds, 4, seed=1))
    trace = tmp_path_factory.mktemp("t") / "trace.jsonl"
    net = Network(trace)
    trainer = FedDCTTrainer(Architecture("mlp", (8,), 4, (16, 16)), clients,
                            RoundConfig(n_clients=4, split_factor=2, total_rounds=3, seed=1), network=net)
    trainer.run_round()
    trainer.run_round()
    net.close()
    return trainer, net, trace


def test_conservation_per_round(one_round):
    _, net, _ = one_round
    for rnd in (0, 1):
        recs = [r for r in net.records if r.round == rnd and not r.local]
        up = sum(sum(r.total_bytes for r in recs if r.sender == n) for n in net.roles)
        down = sum(sum(r.total_bytes for r in recs if r.receiver == n) for n in net.roles)
        assert up == down > 0
    up, down = net.totals()
    assert up == down == sum(r.total_bytes for r in net.records if not r.local)


def test_ledger_equals_sum_of_measured_messages(one_round):
    _, net, _ = one_round
    for node, ledger in net.ledgers.items():
        sent = sum(r.total_bytes for r in net.records if not r.local and r.sender == node)
        received = sum(r.total_bytes for r in net.records if not r.local and r.receiver == node)
        assert (ledger.bytes_up, ledger.bytes_down) == (sent, received)


def test_messages_reach_only_addressed_roles(one_round):
    from feddct.protocol import ALLOWED_RECEIVERS

    _, net, _ = one_round
    for r in net.records:
        if not r.local:
            assert r.receiver_role in ALLOWED_RECEIVERS[MessageKind[r.kind]]
    assert not any(r.kind == "LOWER_ENSEMBLE" and r.receiver_role == "proxy" for r in net.records)


def test_cut_gradient_shapes_mirror_smashed(one_round):
    _, net, _ = one_round
    smashed = [r.categories["smashed"] for r in net.records if r.kind == "SMASHED"]
    grads = [r.categories["cut_gradient"] for r in net.records if r.kind == "CUT_GRADIENT"]
    assert smashed == grads


def test_trace_is_json_lines(one_round):
    _, net, trace = one_round
    lines = trace.read_text().splitlines()
    assert len(lines) == len(net.records)
    first = json.loads(lines[0])
    assert {"round", "phase", "kind", "sender", "receiver", "categories", "header_bytes"} <= set(first)
