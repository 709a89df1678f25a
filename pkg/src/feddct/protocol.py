"""Typed messages, FIFO channels and byte accounting for the simulated network.

Wire frame (little-endian)::

    offset  size  field
    0       2     magic b"FD"
    2       1     wire version (1)
    3       1     message kind (MessageKind value)
    4       4     sender node id   (int32, server = -1)
    8       4     receiver node id (int32)
    12      4     tag (uint32, step counter of the sender)
    16      8     element count n  (uint64)
    24      8     shape digest     (first 8 bytes of blake2b over the part shapes)
    32      8*n   float64 payload, all parts flattened row-major and concatenated

The frame carries no shape table: the receiver knows every part's shape from
the model architecture and batch geometry and checks it against the digest.
A frame is therefore exactly ``32 + 8 * element_count`` bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import defaultdict, deque
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Sequence

import numpy as np

from .costs import CostLedger

HEADER = struct.Struct("<2sBBiiIQQ")
HEADER_SIZE = HEADER.size  # 32
MAGIC = b"FD"
WIRE_VERSION = 1
SERVER = -1


class ProtocolError(RuntimeError):
    pass


class DeadlockError(ProtocolError):
    """``recv`` on an empty channel: the waiting node would block forever."""


class MessageKind(IntEnum):
    LOWER_ENSEMBLE = 1
    UPPER_PORTION = 2
    SMASHED = 3
    PREDICTION = 4
    LOSS_BROADCAST = 5
    CUT_GRADIENT = 6
    CLUSTER_UPLOAD = 7
    GLOBAL_MODEL = 8
    CLIENT_UPDATE = 9


# byte category of each payload part; the last entry repeats for extra parts
PART_CATEGORIES = {
    MessageKind.LOWER_ENSEMBLE: ("model",),
    MessageKind.UPPER_PORTION: ("model",),
    MessageKind.SMASHED: ("smashed", "labels"),
    MessageKind.PREDICTION: ("control",),
    MessageKind.LOSS_BROADCAST: ("control",),
    MessageKind.CUT_GRADIENT: ("cut_gradient",),
    MessageKind.CLUSTER_UPLOAD: ("model",),
    MessageKind.GLOBAL_MODEL: ("model",),
    MessageKind.CLIENT_UPDATE: ("model",),
}

# node roles allowed to receive each kind over a real (non-loopback) link
ALLOWED_RECEIVERS = {
    MessageKind.LOWER_ENSEMBLE: {"main"},
    MessageKind.UPPER_PORTION: {"main", "proxy"},
    MessageKind.SMASHED: {"proxy"},
    MessageKind.PREDICTION: {"server"},
    MessageKind.LOSS_BROADCAST: {"main", "proxy"},
    MessageKind.CUT_GRADIENT: {"main"},
    MessageKind.CLUSTER_UPLOAD: {"server"},
    MessageKind.GLOBAL_MODEL: {"client"},
    MessageKind.CLIENT_UPDATE: {"server"},
}


def shape_digest(shapes: Sequence[tuple[int, ...]]) -> int:
    text = ";".join(",".join(str(int(d)) for d in s) for s in shapes)
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")


@dataclass
class Message:
    kind: MessageKind
    sender: int
    receiver: int
    parts: list[np.ndarray]
    tag: int = 0

    def __post_init__(self):
        self.kind = MessageKind(self.kind)
        self.parts = [np.asarray(p, dtype=np.float64) for p in self.parts]
        if self.kind is MessageKind.SMASHED and len(self.parts) == 2 and len(self.parts[1]) != len(self.parts[0]):
            raise ProtocolError("smashed activations and labels disagree on batch size")

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return [p.shape for p in self.parts]

    @property
    def element_count(self) -> int:
        return int(sum(p.size for p in self.parts))

    @property
    def payload_bytes(self) -> int:
        return 8 * self.element_count

    @property
    def is_local(self) -> bool:
        return self.sender == self.receiver

    def category_bytes(self) -> dict[str, int]:
        cats = PART_CATEGORIES[self.kind]
        out: dict[str, int] = defaultdict(int)
        for i, p in enumerate(self.parts):
            out[cats[min(i, len(cats) - 1)]] += 8 * p.size
        return dict(out)


def serialize(msg: Message) -> bytes:
    header = HEADER.pack(MAGIC, WIRE_VERSION, int(msg.kind), msg.sender, msg.receiver, msg.tag & 0xFFFFFFFF,
                         msg.element_count, shape_digest(msg.shapes))
    body = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in msg.parts)
    return header + body


def deserialize(frame: bytes, shapes: Sequence[tuple[int, ...]]) -> Message:
    if len(frame) < HEADER_SIZE:
        raise ProtocolError(f"frame shorter than header ({len(frame)} bytes)")
    magic, version, kind, sender, receiver, tag, count, digest = HEADER.unpack_from(frame, 0)
    if magic != MAGIC or version != WIRE_VERSION:
        raise ProtocolError("bad frame magic or version")
    if len(frame) != HEADER_SIZE + 8 * count:
        raise ProtocolError(f"frame length {len(frame)} does not match element count {count}")
    shapes = [tuple(int(d) for d in s) for s in shapes]
    if shape_digest(shapes) != digest:
        raise ProtocolError(f"shape digest mismatch for {MessageKind(kind).name}: expected shapes {shapes}")
    flat = np.frombuffer(frame, dtype="<f8", count=count, offset=HEADER_SIZE).astype(np.float64)
    parts, pos = [], 0
    for s in shapes:
        n = int(np.prod(s)) if len(s) else 1
        parts.append(flat[pos : pos + n].reshape(s))
        pos += n
    if pos != count:
        raise ProtocolError(f"declared shapes cover {pos} of {count} elements")
    return Message(MessageKind(kind), sender, receiver, parts, tag)


def measure_bytes(msg: Message) -> int:
    return HEADER_SIZE + msg.payload_bytes


class Channel:
    """Lossless in-order link from one node to another."""

    def __init__(self, sender: int, receiver: int):
        self.sender, self.receiver = sender, receiver
        self._queue: deque[tuple[bytes, list[tuple[int, ...]]]] = deque()

    def __len__(self) -> int:
        return len(self._queue)

    def send(self, msg: Message) -> bytes:
        frame = serialize(msg)
        self._queue.append((frame, msg.shapes))
        return frame

    def recv(self) -> Message:
        if not self._queue:
            raise DeadlockError(f"node {self.receiver} waits on an empty channel from node {self.sender}")
        frame, shapes = self._queue.popleft()
        return deserialize(frame, shapes)


@dataclass
class TrafficRecord:
    round: int
    phase: str
    kind: str
    sender: int
    receiver: int
    sender_role: str
    receiver_role: str
    local: bool
    header_bytes: int
    categories: dict[str, int] = field(default_factory=dict)

    @property
    def payload_bytes(self) -> int:
        return sum(self.categories.values())

    @property
    def total_bytes(self) -> int:
        return self.header_bytes + self.payload_bytes


class Network:
    """Channels between every pair of nodes plus per-node byte ledgers.

    Loopback messages (sender == receiver) go through a channel like any
    other message but are not counted: the data never leaves the device.
    """

    def __init__(self, trace_path=None):
        self.channels: dict[tuple[int, int], Channel] = {}
        self.roles: dict[int, str] = {SERVER: "server"}
        self.ledgers: dict[int, CostLedger] = defaultdict(CostLedger)
        self.records: list[TrafficRecord] = []
        self.round = 0
        self.phase = "setup"
        self._trace = open(trace_path, "w") if trace_path else None

    def close(self) -> None:
        if self._trace:
            self._trace.close()
            self._trace = None

    def channel(self, sender: int, receiver: int) -> Channel:
        key = (sender, receiver)
        if key not in self.channels:
            self.channels[key] = Channel(sender, receiver)
        return self.channels[key]

    def set_role(self, node: int, role: str) -> None:
        self.roles[node] = role

    def set_context(self, round: int | None = None, phase: str | None = None) -> None:
        if round is not None:
            self.round = round
        if phase is not None:
            self.phase = phase

    def send(self, msg: Message) -> int:
        receiver_role = self.roles.get(msg.receiver, "unknown")
        if not msg.is_local and receiver_role not in ALLOWED_RECEIVERS[msg.kind]:
            raise ProtocolError(f"{msg.kind.name} may not be delivered to node {msg.receiver} "
                                f"in role {receiver_role!r}")
        frame = self.channel(msg.sender, msg.receiver).send(msg)
        rec = TrafficRecord(self.round, self.phase, msg.kind.name, msg.sender, msg.receiver,
                            self.roles.get(msg.sender, "unknown"), receiver_role, msg.is_local,
                            HEADER_SIZE, msg.category_bytes())
        if not msg.is_local:
            self.ledgers[msg.sender].bytes_up += len(frame)
            self.ledgers[msg.receiver].bytes_down += len(frame)
        self.records.append(rec)
        if self._trace:
            self._trace.write(json.dumps(rec.__dict__) + "\n")
        return len(frame)

    def recv(self, sender: int, receiver: int) -> Message:
        return self.channel(sender, receiver).recv()

    def pending(self) -> int:
        return sum(len(c) for c in self.channels.values())

    # -- accounting ------------------------------------------------------------
    def bytes_for(self, node: int, round: int | None = None, categories=None, include_headers: bool = False,
                  role: str | None = None, phase: str | None = None) -> int:
        """Bytes sent plus received by ``node``, optionally filtered.

        ``role`` matches the role the node held when the message was sent.
        """
        total = 0
        for rec in self.records:
            if rec.local or node not in (rec.sender, rec.receiver):
                continue
            if round is not None and rec.round != round:
                continue
            if phase is not None and rec.phase != phase:
                continue
            node_role = rec.sender_role if rec.sender == node else rec.receiver_role
            if role is not None and node_role != role:
                continue
            if categories is None:
                total += rec.payload_bytes
            else:
                total += sum(v for k, v in rec.categories.items() if k in categories)
            if include_headers:
                total += rec.header_bytes
        return total

    def totals(self) -> tuple[int, int]:
        up = sum(led.bytes_up for led in self.ledgers.values())
        down = sum(led.bytes_down for led in self.ledgers.values())
        return up, down
