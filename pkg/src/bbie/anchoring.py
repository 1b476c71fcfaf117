"""Anchoring the permissioned chain onto a simulated public chain.

The public chain is a ledger Chain with a single validator that mines one
block per anchor transaction. Anchor records are posted to its
``anchor_registry`` contract with an ordinary signed transaction, so the
record encoding is the same contract-call form used everywhere else.

Anchor timestamps are local simulated seconds, not public-chain time.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable

from .config import AnchorPolicy, stub_genesis_args
from .encoding import hex_to_bytes
from .errors import StubRejected
from .keys import KeyPair
from .ledger import (
    Block,
    Chain,
    Transaction,
    Vote,
    append_block,
    block_digest,
    execute_block,
    load_chain,
    make_genesis,
    save_chain,
)

REGISTRY = "anchor_registry"
INTERVAL = "interval"
STAGE_COMPLETED = "stage_completed"


def interval_reason() -> dict:
    return {"kind": INTERVAL}


def stage_reason(lot_id: str, stage: str) -> dict:
    return {"kind": STAGE_COMPLETED, "lot_id": lot_id, "stage": stage}


@dataclass(frozen=True)
class AnchorRecord:
    source_chain: str
    height: int
    digest: bytes
    anchored_at: int
    reason: dict

    def to_args(self) -> dict:
        return {
            "source_chain": self.source_chain,
            "height": self.height,
            "digest": self.digest.hex(),
            "anchored_at": self.anchored_at,
            "reason": self.reason,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AnchorRecord":
        return cls(data["source_chain"], data["height"], hex_to_bytes(data["digest"]), data["anchored_at"], data["reason"])


class PublicChainStub:
    """Single-validator chain hosting an open anchor registry."""

    def __init__(self, validator: KeyPair | None, chain: Chain | None = None):
        if chain is None and validator is None:
            raise ValueError("a new stub needs its validator key")
        self.validator = validator
        self.chain = chain or make_genesis(stub_genesis_args(validator.address.hex()))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PublicChainStub":
        """Read-only stub replayed from a saved chain file."""
        return cls(None, load_chain(path))

    def save(self, path: str | os.PathLike) -> None:
        save_chain(self.chain, path)

    def submit(self, tx: Transaction, now: int):
        """Mine ``tx`` into a new block; a failing call is refused rather than mined."""
        if self.validator is None:
            raise StubRejected("this stub was loaded read-only")
        chain = self.chain
        draft = Block(chain.height + 1, chain.head_digest, now, self.validator.address, (tx,), b"")
        result = execute_block(chain, draft)
        receipt = result.receipts[0]
        if not receipt.ok:
            raise StubRejected(f"{receipt.error}: {receipt.detail}")
        block = Block(draft.height, draft.parent, now, self.validator.address, (tx,), result.state_digest)
        block = block.with_votes([Vote.sign(self.validator, block_digest(block))])
        append_block(chain, block, result=result)
        return receipt

    def records(self, source_chain: str | None = None) -> list[AnchorRecord]:
        args = {} if source_chain is None else {"source_chain": source_chain}
        return [AnchorRecord.from_dict(r) for r in self.chain.query(REGISTRY, "list_anchors", args)]

    def get(self, source_chain: str, height: int) -> bytes | None:
        entry = self.chain.query(REGISTRY, "get_anchor", {"source_chain": source_chain, "height": height})
        return None if entry is None else bytes.fromhex(entry["digest"])


def should_anchor(policy: AnchorPolicy, last: int, now: int, pending: Iterable[str] = ()) -> bool:
    """True when the interval has elapsed or a pending event kind is a trigger."""
    return now - last >= policy.interval or any(kind in policy.event_triggers for kind in pending)


def anchor_now(
    source: Chain, stub: PublicChainStub, anchor_key: KeyPair, now: int, reason: dict,
    *, source_chain: str | None = None, height: int | None = None,
) -> tuple[PublicChainStub, AnchorRecord]:
    """Post the digest of ``source``'s block at ``height`` (default: head) to the stub."""
    height = source.height if height is None else height
    record = AnchorRecord(
        source_chain or source.state["chain_id"], height, source.digests[height], now, reason
    )
    tx = Transaction.create(anchor_key, REGISTRY, "post", record.to_args(), stub.chain.height)
    stub.submit(tx, now)
    return stub, record


@dataclass(frozen=True)
class Verified:
    anchors: int

    exit_code = 0


@dataclass(frozen=True)
class Mismatch:
    height: int

    exit_code = 2


@dataclass(frozen=True)
class NoAnchors:
    exit_code = 3


AnchorVerdict = Verified | Mismatch | NoAnchors


def verify_anchor(stub: PublicChainStub, local: Chain | list[Block], source_chain: str | None = None) -> AnchorVerdict:
    """Compare recomputed local digests with every anchored height.

    Digests are recomputed from block content and the stored parent links are
    checked against them, so a change to block k shows up at every anchored
    height from k on.
    """
    blocks = local.blocks if isinstance(local, Chain) else list(local)
    if source_chain is None and blocks and blocks[0].txs:
        source_chain = blocks[0].txs[0].args.get("chain_id")
    anchored: dict[int, bytes] = {}
    for rec in stub.records(source_chain):
        anchored.setdefault(rec.height, rec.digest)
    if not anchored:
        return NoAnchors()
    broken = False
    previous = None
    for h, block in enumerate(blocks):
        digest = block_digest(block)
        if block.height != h or (previous is not None and block.parent != previous):
            broken = True
        previous = digest
        if h in anchored and (broken or digest != anchored[h]):
            return Mismatch(h)
    missing = [h for h in anchored if h >= len(blocks)]
    if missing:
        return Mismatch(min(missing))
    return Verified(len(anchored))


@dataclass
class AnchorService:
    """Interval and event-triggered anchoring driven by one node's commits."""

    policy: AnchorPolicy
    key: KeyPair
    stub: PublicChainStub
    source_chain: str
    last: int = 0
    records: list[AnchorRecord] = field(default_factory=list)

    def tick(self, chain: Chain, now: int) -> AnchorRecord | None:
        if not should_anchor(self.policy, self.last, now):
            return None
        _, record = anchor_now(chain, self.stub, self.key, now, interval_reason(), source_chain=self.source_chain)
        self.last = now
        self.records.append(record)
        return record

    def on_commit(self, chain: Chain, block: Block, now: int) -> list[AnchorRecord]:
        """Anchor the committed block once per triggering event it carries."""
        out = []
        for tx in block.txs:
            receipt = chain.receipts[tx.id]
            for event in receipt.events:
                if event["kind"] != STAGE_COMPLETED or event["kind"] not in self.policy.event_triggers:
                    continue
                reason = stage_reason(event["lot_id"], event["stage"])
                _, record = anchor_now(
                    chain, self.stub, self.key, now, reason, source_chain=self.source_chain, height=block.height
                )
                out.append(record)
        self.records.extend(out)
        return out
