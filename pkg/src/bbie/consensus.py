"""Round-robin proof-of-authority node state machine.

Each block interval the scheduled proposer builds a block from its mempool
and broadcasts a proposal. Validators check linkage, transactions and the
declared state digest, then vote to the proposer. At quorum the proposer
attaches the votes and broadcasts the commit; every node appends it.

There is no view change: if the proposer for a height cannot gather a
quorum it retries the same height on its next tick. Nodes that fall behind
ask the sender of a future block for the missing range.

Nodes are driven by ``handle_message`` and ``handle_tick``; both mutate the
node in place and return the outgoing messages. Times are integer
simulated milliseconds.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Any

from .encoding import canonical_encode
from .errors import ChainError
from .keys import KeyPair
from .ledger import (
    Block,
    BlockResult,
    Chain,
    Transaction,
    Vote,
    append_block,
    block_digest,
    check_linkage,
    execute_block,
)
from .poa import quorum, select_proposer

PROPOSE = "propose"
VOTE = "vote"
COMMIT = "commit"
TX_GOSSIP = "tx"
SYNC_REQUEST = "sync"
MESSAGE_KINDS = (PROPOSE, VOTE, COMMIT, TX_GOSSIP, SYNC_REQUEST)
SYNC_BATCH = 64


@dataclass(frozen=True)
class NetMessage:
    kind: str
    payload: dict
    sender: bytes
    to: bytes | None = None  # None means broadcast

    def summary(self) -> dict:
        """Compact, canonical description used in transcripts."""
        p = self.payload
        if self.kind in (PROPOSE, COMMIT):
            return {"height": p["block"].height, "block": block_digest(p["block"])}
        if self.kind == VOTE:
            return {"height": p["height"], "block": p["block_id"]}
        if self.kind == TX_GOSSIP:
            return {"tx": p["tx"].id}
        return {"from_height": p["from_height"]}

    def to_wire(self) -> bytes:
        p = dict(self.payload)
        for k, v in p.items():
            if hasattr(v, "to_dict"):
                p[k] = v.to_dict()
        return canonical_encode({"kind": self.kind, "payload": p, "from": self.sender, "to": self.to})


@dataclass
class Pending:
    block: Block
    block_id: bytes
    result: BlockResult
    votes: dict[bytes, Vote] = field(default_factory=dict)


@dataclass
class NodeState:
    name: str
    key: KeyPair
    chain: Chain
    max_block_txs: int = 500
    stall_ms: int = 0  # broadcast a sync request after this long without progress; 0 disables
    last_progress: int = 0
    mempool: dict[bytes, tuple[int, Transaction]] = field(default_factory=dict)
    pending_votes: dict[int, Pending] = field(default_factory=dict)
    validated: dict[bytes, tuple[Block, BlockResult]] = field(default_factory=dict)
    future: dict[int, Block] = field(default_factory=dict)
    counters: Counter = field(default_factory=Counter)
    commits: list[tuple[int, int, bytes]] = field(default_factory=list)  # (time, height, digest)

    @property
    def address(self) -> bytes:
        return self.key.address

    @property
    def kind(self) -> str | None:
        return self.chain.enrolled().get(self.address)

    @property
    def is_validator(self) -> bool:
        return self.kind == "validator"

    def submit(self, tx: Transaction, now: int) -> list[NetMessage]:
        """Accept a client transaction and gossip it to the network."""
        if not self._admit(tx, now):
            return []
        return [NetMessage(TX_GOSSIP, {"tx": tx}, self.address)]

    def _admit(self, tx: Transaction, now: int) -> bool:
        if tx.id in self.mempool or tx.id in self.chain.tx_index:
            return False
        if not tx.signature_valid():
            self.counters["rejected_tx"] += 1
            return False
        self.mempool[tx.id] = (now, tx)
        return True

    def mempool_order(self) -> list[Transaction]:
        return [tx for _, tx in sorted(self.mempool.values(), key=lambda e: (e[0], e[1].id))]


def handle_tick(node: NodeState, now: int) -> list[NetMessage]:
    """Block-interval timer: the scheduled proposer proposes the next height.

    Any node that has not advanced for ``stall_ms`` also asks all peers for
    blocks it may have missed while cut off.
    """
    out = []
    if node.stall_ms and now - node.last_progress >= node.stall_ms:
        node.last_progress = now
        node.counters["sync_requests"] += 1
        out.append(NetMessage(SYNC_REQUEST, {"from_height": node.chain.height + 1}, node.address))
    return out + _propose(node, now)


def _propose(node: NodeState, now: int) -> list[NetMessage]:
    if not node.is_validator:
        return []
    chain = node.chain
    height = chain.height + 1
    validators = chain.validators()
    if select_proposer(height, validators) != node.address:
        return []
    txs = tuple(node.mempool_order()[: node.max_block_txs])
    draft = Block(height, chain.head_digest, now // 1000, node.address, txs, b"")
    try:
        result = execute_block(chain, draft)
    except ChainError:
        # a mempool entry became invalid; drop everything already committed and retry next tick
        node.counters["bad_mempool"] += 1
        for tx in txs:
            if tx.id in chain.tx_index:
                node.mempool.pop(tx.id, None)
        return []
    block = Block(height, chain.head_digest, now // 1000, node.address, txs, result.state_digest)
    block_id = block_digest(block)
    pending = Pending(block, block_id, result, {node.address: Vote.sign(node.key, block_id)})
    node.pending_votes = {height: pending}
    node.counters["proposals"] += 1
    if len(pending.votes) >= quorum(len(validators)):
        return _commit_own(node, pending, now)
    return [NetMessage(PROPOSE, {"block": block}, node.address)]


def handle_message(node: NodeState, msg: NetMessage, now: int) -> list[NetMessage]:
    """Process one delivered message; returns the node's outbox."""
    enrolled = node.chain.enrolled()
    if msg.sender not in enrolled:
        node.counters["dropped_unenrolled"] += 1
        return []
    if msg.kind == TX_GOSSIP:
        node._admit(msg.payload["tx"], now)
        return []
    if msg.kind == PROPOSE:
        return _on_propose(node, msg, now)
    if msg.kind == VOTE:
        if enrolled[msg.sender] != "validator":
            node.counters["dropped_unenrolled"] += 1
            return []
        return _on_vote(node, msg, now)
    if msg.kind == COMMIT:
        return _on_commit(node, msg, now)
    if msg.kind == SYNC_REQUEST:
        return _on_sync(node, msg)
    node.counters["dropped_unknown_kind"] += 1
    return []


def _on_propose(node: NodeState, msg: NetMessage, now: int) -> list[NetMessage]:
    block: Block = msg.payload["block"]
    chain = node.chain
    if block.proposer != msg.sender:
        node.counters["rejected_proposals"] += 1
        return []
    if block.height > chain.height + 1:
        node.counters["behind"] += 1
        return [_sync_request(node, msg.sender)]
    if block.height <= chain.height:
        # the proposer is behind us; help it catch up
        node.counters["stale_proposals"] += 1
        return _sync_response(node, msg.sender, block.height)
    if not node.is_validator:
        return []
    validators = chain.validators()
    try:
        check_linkage(chain, block)
        if select_proposer(block.height, validators) != block.proposer:
            raise ChainError(block.height, "unscheduled proposer")
        result = execute_block(chain, block)
        if result.state_digest != block.state_digest:
            raise ChainError(block.height, "state digest mismatch")
    except ChainError as exc:
        node.counters["rejected_proposals"] += 1
        node.counters[f"reject_{exc.kind}"] += 1
        return []
    block_id = block_digest(block)
    node.validated = {block_id: (block, result)}
    vote = Vote.sign(node.key, block_id)
    payload = {"height": block.height, "block_id": block_id, "vote": vote}
    return [NetMessage(VOTE, payload, node.address, to=block.proposer)]


def _on_vote(node: NodeState, msg: NetMessage, now: int) -> list[NetMessage]:
    p = msg.payload
    pending = node.pending_votes.get(p["height"])
    vote: Vote = p["vote"]
    if pending is None or p["block_id"] != pending.block_id:
        node.counters["late_votes"] += 1
        return []
    if vote.address != msg.sender or not vote.valid_for(pending.block_id):
        node.counters["bad_votes"] += 1
        return []
    pending.votes[vote.address] = vote
    if len(pending.votes) >= quorum(len(node.chain.validators())):
        return _commit_own(node, pending, now)
    return []


def _commit_own(node: NodeState, pending: Pending, now: int) -> list[NetMessage]:
    block = pending.block.with_votes(pending.votes.values())
    append_block(node.chain, block, result=pending.result)
    _after_append(node, block, pending.block_id, now)
    _drain_future(node, now)
    return [NetMessage(COMMIT, {"block": block}, node.address)]


def _after_append(node: NodeState, block: Block, block_id: bytes, now: int) -> None:
    for tx in block.txs:
        node.mempool.pop(tx.id, None)
    node.pending_votes = {h: p for h, p in node.pending_votes.items() if h > block.height}
    node.validated = {}
    node.commits.append((now, block.height, block_id))
    node.last_progress = now


def _try_append(node: NodeState, block: Block, now: int) -> bool:
    block_id = block_digest(block)
    cached = node.validated.get(block_id)
    try:
        append_block(node.chain, block, result=cached[1] if cached else None)
    except ChainError as exc:
        node.counters["rejected_commits"] += 1
        node.counters[f"reject_{exc.kind}"] += 1
        return False
    _after_append(node, block, block_id, now)
    return True


def _drain_future(node: NodeState, now: int) -> None:
    while node.chain.height + 1 in node.future:
        if not _try_append(node, node.future.pop(node.chain.height + 1), now):
            break
    node.future = {h: b for h, b in node.future.items() if h > node.chain.height}


def _on_commit(node: NodeState, msg: NetMessage, now: int) -> list[NetMessage]:
    block: Block = msg.payload["block"]
    height = node.chain.height
    if block.height <= height:
        return []
    if block.height > height + 1:
        first_gap = block.height not in node.future and height + 1 not in node.future
        node.future[block.height] = block
        return [_sync_request(node, msg.sender)] if first_gap else []
    if _try_append(node, block, now):
        _drain_future(node, now)
    return []


def _sync_request(node: NodeState, to: bytes) -> NetMessage:
    node.counters["sync_requests"] += 1
    return NetMessage(SYNC_REQUEST, {"from_height": node.chain.height + 1}, node.address, to=to)


def _sync_response(node: NodeState, to: bytes, from_height: int) -> list[NetMessage]:
    last = min(node.chain.height, from_height + SYNC_BATCH - 1)
    return [
        NetMessage(COMMIT, {"block": node.chain.blocks[h]}, node.address, to=to)
        for h in range(max(from_height, 1), last + 1)
    ]


def _on_sync(node: NodeState, msg: NetMessage) -> list[NetMessage]:
    return _sync_response(node, msg.sender, msg.payload["from_height"])


def committed_summary(node: NodeState) -> dict[str, Any]:
    return {
        "node": node.name,
        "height": node.chain.height,
        "head": node.chain.head_digest,
        "digests": list(node.chain.digests),
    }
