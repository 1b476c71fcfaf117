"""Feeless DAG ledger for IoT telemetry.

Every message approves two tips chosen uniformly at random. A single ingest
coordinator attaches messages and periodically issues checkpoint messages;
a checkpoint confirms all of its not-yet-confirmed ancestors and yields a
CertifiedBatch whose digest is then recorded on the permissioned chain.

Devices sign the telemetry record (topic, payload, device, key, ts). The
coordinator picks parents at attach time, so parents are covered by the
message id but not by the device signature.

Ingest wire format, one JSON object per line::

    {"topic": "a/b/c", "payload": {"temp_mc": 18250, "unit": "mC"},
     "device": hex20, "public_key": hex32, "ts": int, "sig": hex64}
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable

from .encoding import ZERO_DIGEST, canonical_decode, canonical_encode, digest_of, hex_to_bytes
from .errors import (
    BadSignature,
    DecodeError,
    DuplicateId,
    EmptyTangle,
    NothingToConfirm,
    TangleError,
    UnknownParent,
)
from .keys import ADDRESS_SIZE, KeyPair, derive_address, verify_signature
from .ledger import Transaction

CHECKPOINT_TOPIC = "checkpoint"
GENESIS_TOPIC = "genesis"
RESERVED_TOPICS = (CHECKPOINT_TOPIC, GENESIS_TOPIC)


def _check_topic(topic: Any) -> str:
    if not isinstance(topic, str) or not topic or any(not part for part in topic.split("/")):
        raise DecodeError(f"topic must be a non-empty slash-separated path, got {topic!r}")
    return topic


def _check_payload(payload: Any) -> dict:
    if not isinstance(payload, dict):
        raise DecodeError("payload must be a map")
    for k, v in payload.items():
        if not isinstance(k, str) or isinstance(v, bool) or not isinstance(v, (int, str)):
            raise DecodeError(f"payload field {k!r} must be a scaled integer or a unit string")
    return payload


def record_digest(topic: str, payload: dict, device: bytes, public_key: bytes, ts: int) -> bytes:
    return digest_of({"topic": topic, "payload": payload, "device": device, "public_key": public_key, "ts": ts})


def sign_record(key: KeyPair, topic: str, payload: dict, ts: int) -> dict:
    """Build a signed ingest record as a device would send it."""
    _check_topic(topic)
    _check_payload(payload)
    sig = key.sign(record_digest(topic, payload, key.address, key.public, ts))
    return {
        "topic": topic,
        "payload": payload,
        "device": key.address.hex(),
        "public_key": key.public.hex(),
        "ts": ts,
        "sig": sig.hex(),
    }


@dataclass(frozen=True, eq=False)
class DagMessage:
    parents: tuple[bytes, bytes]
    topic: str
    payload: dict
    device: bytes
    public_key: bytes
    ts: int
    sig: bytes

    @cached_property
    def id(self) -> bytes:
        return digest_of(
            {
                "parents": list(self.parents),
                "topic": self.topic,
                "payload": self.payload,
                "device": self.device,
                "public_key": self.public_key,
                "ts": self.ts,
            }
        )

    def signature_valid(self) -> bool:
        digest = record_digest(self.topic, self.payload, self.device, self.public_key, self.ts)
        return derive_address(self.public_key) == self.device and verify_signature(self.public_key, digest, self.sig)

    @property
    def is_telemetry(self) -> bool:
        return self.topic not in RESERVED_TOPICS

    @classmethod
    def from_record(cls, record: dict, parents: tuple[bytes, bytes]) -> "DagMessage":
        try:
            ts = record["ts"]
            if not isinstance(ts, int) or isinstance(ts, bool):
                raise DecodeError("ts must be an integer")
            return cls(
                parents=parents,
                topic=_check_topic(record["topic"]),
                payload=_check_payload(record["payload"]),
                device=hex_to_bytes(record["device"], ADDRESS_SIZE),
                public_key=hex_to_bytes(record["public_key"]),
                ts=ts,
                sig=hex_to_bytes(record["sig"]),
            )
        except (KeyError, TypeError) as exc:
            raise DecodeError(f"malformed telemetry record: {exc!r}") from exc

    def to_dict(self) -> dict:
        return {
            "id": self.id.hex(),
            "parents": [p.hex() for p in self.parents],
            "topic": self.topic,
            "payload": self.payload,
            "device": self.device.hex(),
            "public_key": self.public_key.hex(),
            "ts": self.ts,
            "sig": self.sig.hex(),
        }


@dataclass(frozen=True)
class CertifiedBatch:
    batch_digest: bytes
    count: int
    t_min: int
    t_max: int
    topics: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.count < 1 or self.t_min > self.t_max or not self.topics:
            raise TangleError("a certified batch needs count >= 1, t_min <= t_max and topics")

    @classmethod
    def over(cls, messages: Iterable[DagMessage]) -> "CertifiedBatch":
        messages = list(messages)
        if not messages:
            raise NothingToConfirm("empty batch")
        return cls(
            batch_digest=batch_digest(m.id for m in messages),
            count=len(messages),
            t_min=min(m.ts for m in messages),
            t_max=max(m.ts for m in messages),
            topics=tuple(sorted({m.topic for m in messages})),
        )

    def to_args(self) -> dict:
        return {
            "batch_digest": self.batch_digest.hex(),
            "count": self.count,
            "t_min": self.t_min,
            "t_max": self.t_max,
            "topics": list(self.topics),
        }


def batch_digest(ids: Iterable[bytes]) -> bytes:
    """Digest over the sorted list of message ids."""
    return digest_of(sorted(ids))


@dataclass
class Tangle:
    genesis: bytes
    coordinator: bytes
    messages: dict[bytes, DagMessage] = field(default_factory=dict)
    tips: set[bytes] = field(default_factory=set)
    confirmed: set[bytes] = field(default_factory=set)
    checkpoints: list[bytes] = field(default_factory=list)
    batches: list[tuple[bytes, CertifiedBatch]] = field(default_factory=list)  # (checkpoint id, batch)

    @classmethod
    def create(cls, coordinator: KeyPair, ts: int = 0) -> "Tangle":
        topic, payload = GENESIS_TOPIC, {}
        sig = coordinator.sign(record_digest(topic, payload, coordinator.address, coordinator.public, ts))
        msg = DagMessage((ZERO_DIGEST, ZERO_DIGEST), topic, payload, coordinator.address, coordinator.public, ts, sig)
        tangle = cls(msg.id, coordinator.address)
        tangle.messages[msg.id] = msg
        tangle.tips.add(msg.id)
        tangle.confirmed.add(msg.id)
        return tangle

    def unconfirmed(self) -> list[bytes]:
        return sorted(i for i, m in self.messages.items() if m.is_telemetry and i not in self.confirmed)

    def ancestors(self, roots: Iterable[bytes], *, stop_at: set[bytes] | None = None) -> set[bytes]:
        """All messages reachable through parent links from ``roots`` (inclusive)."""
        stop_at = stop_at or set()
        seen: set[bytes] = set()
        stack = [r for r in roots if r not in stop_at]
        while stack:
            cur = stack.pop()
            if cur in seen:
                continue
            seen.add(cur)
            for p in self.messages[cur].parents:
                if p in self.messages and p not in seen and p not in stop_at:
                    stack.append(p)
        return seen


def save_tangle(tangle: Tangle, path: str | os.PathLike) -> None:
    """One canonical message per line, in attach order."""
    with open(path, "wb") as fh:
        for msg in tangle.messages.values():
            fh.write(canonical_encode(msg.to_dict()) + b"\n")


def load_tangle(path: str | os.PathLike) -> Tangle:
    """Re-attach saved messages and re-derive confirmations from the checkpoints."""
    lines = [line for line in Path(path).read_bytes().splitlines() if line.strip()]
    if not lines:
        raise EmptyTangle(str(path))
    msgs = []
    for line in lines:
        data = canonical_decode(line)
        parents = tuple(hex_to_bytes(p, 32) for p in data["parents"])
        msgs.append(DagMessage.from_record(data, parents))
    genesis = msgs[0]
    if genesis.topic != GENESIS_TOPIC or not genesis.signature_valid():
        raise DecodeError("first saved message must be a signed genesis")
    tangle = Tangle(genesis.id, genesis.device, {genesis.id: genesis}, {genesis.id}, {genesis.id})
    for msg in msgs[1:]:
        attach(tangle, msg)
        if msg.topic == CHECKPOINT_TOPIC and msg.device == tangle.coordinator:
            fresh = tangle.ancestors(msg.parents, stop_at=tangle.confirmed)
            batch = CertifiedBatch.over(tangle.messages[i] for i in sorted(fresh) if tangle.messages[i].is_telemetry)
            tangle.confirmed |= fresh | {msg.id}
            tangle.checkpoints.append(msg.id)
            tangle.batches.append((msg.id, batch))
    return tangle


def select_tips(tangle: Tangle, rng: random.Random, among: Iterable[bytes] | None = None) -> tuple[bytes, bytes]:
    """Two distinct tips drawn uniformly; a lone tip is returned twice."""
    pool = sorted(tangle.tips if among is None else among)
    if not pool:
        raise EmptyTangle("no tips to approve")
    if len(pool) == 1:
        return pool[0], pool[0]
    a, b = rng.sample(pool, 2)
    return a, b


def attach(tangle: Tangle, msg: DagMessage, *, check_signature: bool = True) -> Tangle:
    """Add ``msg``; ``check_signature=False`` is for callers that verified it already."""
    if msg.id in tangle.messages:
        raise DuplicateId(msg.id.hex())
    if check_signature and not msg.signature_valid():
        raise BadSignature(f"telemetry message {msg.id.hex()} has a bad device signature")
    for p in msg.parents:
        if p not in tangle.messages:
            raise UnknownParent(p.hex())
    tangle.messages[msg.id] = msg
    tangle.tips.difference_update(msg.parents)
    tangle.tips.add(msg.id)
    return tangle


def issue_checkpoint(
    tangle: Tangle, coordinator: KeyPair, now: int, rng: random.Random
) -> tuple[Tangle, DagMessage, CertifiedBatch]:
    """Attach a checkpoint over two tips and confirm its new ancestors.

    Parents are drawn among tips that are not yet confirmed, so the
    checkpoint always confirms something when anything is pending.
    """
    if coordinator.address != tangle.coordinator:
        raise TangleError("only the ingest coordinator may issue checkpoints")
    if not tangle.unconfirmed():
        raise NothingToConfirm("no unconfirmed telemetry")
    candidates = [t for t in tangle.tips if t not in tangle.confirmed]
    parents = select_tips(tangle, rng, among=candidates)
    fresh = tangle.ancestors(parents, stop_at=tangle.confirmed)
    telemetry = [tangle.messages[i] for i in sorted(fresh) if tangle.messages[i].is_telemetry]
    batch = CertifiedBatch.over(telemetry)
    payload = {"count": batch.count, "batch_digest": batch.batch_digest.hex()}
    sig = coordinator.sign(record_digest(CHECKPOINT_TOPIC, payload, coordinator.address, coordinator.public, now))
    checkpoint = DagMessage(parents, CHECKPOINT_TOPIC, payload, coordinator.address, coordinator.public, now, sig)
    attach(tangle, checkpoint)
    tangle.confirmed.update(fresh)
    tangle.confirmed.add(checkpoint.id)
    tangle.checkpoints.append(checkpoint.id)
    tangle.batches.append((checkpoint.id, batch))
    return tangle, checkpoint, batch


def summarize_batch(batch: CertifiedBatch, coordinator: KeyPair, nonce: int, contract: str = "traceability") -> Transaction:
    """Signed permissioned-chain call recording ``batch`` via record_telemetry."""
    return Transaction.create(coordinator, contract, "record_telemetry", batch.to_args(), nonce)


class IngestCoordinator:
    """Serializes attaches and checkpoints.

    A checkpoint is issued once K messages are pending or once the oldest
    pending message has waited T seconds, whichever comes first. Attach and
    checkpoint never interleave, so no message can slip in between tip
    selection and checkpoint attach.
    """

    def __init__(
        self,
        coordinator: KeyPair,
        *,
        seed: int = 0,
        checkpoint_every: int = 16,
        checkpoint_interval: int = 300,
        genesis_ts: int = 0,
    ):
        if checkpoint_every < 1 or checkpoint_interval <= 0:
            raise TangleError("checkpoint cadence must be positive")
        self.key = coordinator
        self.rng = random.Random(seed)
        self.tangle = Tangle.create(coordinator, genesis_ts)
        self.checkpoint_every = checkpoint_every
        self.checkpoint_interval = checkpoint_interval
        self.pending = 0
        self.window_start: int | None = None

    def ingest(self, record: dict, now: int) -> tuple[DagMessage, list[CertifiedBatch]]:
        """Attach one device record; returns the message and any batch it completed."""
        if record.get("topic") in RESERVED_TOPICS:
            raise DecodeError(f"topic {record['topic']!r} is reserved")
        # validate before drawing tips so a bad record leaves the PRNG untouched
        msg = DagMessage.from_record(record, (ZERO_DIGEST, ZERO_DIGEST))
        if not msg.signature_valid():
            raise BadSignature("telemetry record has a bad device signature")
        msg = replace(msg, parents=select_tips(self.tangle, self.rng))
        attach(self.tangle, msg, check_signature=False)
        self.pending += 1
        if self.window_start is None:
            self.window_start = now
        return msg, self.poll(now)

    @property
    def deadline(self) -> int | None:
        """Time at which the pending window forces a checkpoint."""
        return None if self.window_start is None else self.window_start + self.checkpoint_interval

    def poll(self, now: int) -> list[CertifiedBatch]:
        out = []
        while self.pending and (self.pending >= self.checkpoint_every or now >= self.deadline):
            out.append(self.checkpoint(now))
        return out

    def checkpoint(self, now: int) -> CertifiedBatch:
        _, _, batch = issue_checkpoint(self.tangle, self.key, now, self.rng)
        self.pending = len(self.tangle.unconfirmed())
        self.window_start = now if self.pending else None
        return batch
