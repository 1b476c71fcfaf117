"""Hash-chained blocks of signed contract calls.

The same structure backs the permissioned chain and the public-chain stub.
Blocks are digested over (height, parent, timestamp, proposer, tx ids,
state digest); validator votes sign that digest and are kept outside it.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Sequence

from .contracts import host
from .contracts.host import Receipt
from .contracts.permissioning import validators as _validator_hexes
from .encoding import (
    ZERO_DIGEST,
    canonical_decode,
    canonical_encode,
    digest_of,
    hex_to_bytes,
)
from .errors import (
    BadGenesis,
    BadHeight,
    BadParent,
    BadProposer,
    ChainError,
    ConfigError,
    DecodeError,
    DuplicateTransaction,
    InsufficientVotes,
    InvalidTxSignature,
    StateMismatch,
)
from .keys import ADDRESS_SIZE, KeyPair, derive_address, verify_signature
from .poa import quorum, select_proposer

ZERO_ADDRESS = bytes(ADDRESS_SIZE)
GENESIS_CONTRACT = "permissioning"
GENESIS_METHOD = "genesis"


@dataclass(frozen=True, eq=False)
class Transaction:
    sender: bytes
    public_key: bytes
    nonce: int
    contract: str
    method: str
    args: Any
    signature: bytes = b""

    def __post_init__(self) -> None:
        # normalize args once so bytes become hex and the id is stable
        object.__setattr__(self, "args", canonical_decode(canonical_encode(self.args)))

    def preimage(self) -> dict:
        return {
            "sender": self.sender,
            "public_key": self.public_key,
            "nonce": self.nonce,
            "contract": self.contract,
            "method": self.method,
            "args": self.args,
        }

    @cached_property
    def id(self) -> bytes:
        return digest_of(self.preimage())

    @classmethod
    def create(cls, key: KeyPair, contract: str, method: str, args: Any, nonce: int) -> "Transaction":
        unsigned = cls(key.address, key.public, nonce, contract, method, args)
        return replace(unsigned, signature=key.sign(unsigned.id))

    def signature_valid(self) -> bool:
        return derive_address(self.public_key) == self.sender and verify_signature(
            self.public_key, self.id, self.signature
        )

    def to_dict(self) -> dict:
        return {"id": self.id.hex(), **{k: v.hex() if isinstance(v, bytes) else v for k, v in self.preimage().items()},
                "signature": self.signature.hex()}

    @classmethod
    def from_dict(cls, data: dict) -> "Transaction":
        try:
            return cls(
                sender=hex_to_bytes(data["sender"], ADDRESS_SIZE),
                public_key=hex_to_bytes(data["public_key"]),
                nonce=_int(data["nonce"]),
                contract=_str(data["contract"]),
                method=_str(data["method"]),
                args=data["args"],
                signature=hex_to_bytes(data["signature"]),
            )
        except (KeyError, TypeError) as exc:
            raise DecodeError(f"malformed transaction: {exc}") from exc

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Transaction) and self.to_dict() == other.to_dict()

    def __hash__(self) -> int:
        return hash(self.id)


@dataclass(frozen=True)
class Vote:
    address: bytes
    public_key: bytes
    signature: bytes

    @classmethod
    def sign(cls, key: KeyPair, block_id: bytes) -> "Vote":
        return cls(key.address, key.public, key.sign(block_id))

    def valid_for(self, block_id: bytes) -> bool:
        return derive_address(self.public_key) == self.address and verify_signature(
            self.public_key, block_id, self.signature
        )

    def to_dict(self) -> dict:
        return {"address": self.address.hex(), "public_key": self.public_key.hex(), "signature": self.signature.hex()}

    @classmethod
    def from_dict(cls, data: dict) -> "Vote":
        return cls(
            hex_to_bytes(data["address"], ADDRESS_SIZE),
            hex_to_bytes(data["public_key"]),
            hex_to_bytes(data["signature"]),
        )


@dataclass(frozen=True)
class Block:
    height: int
    parent: bytes
    timestamp: int
    proposer: bytes
    txs: tuple[Transaction, ...]
    state_digest: bytes
    votes: tuple[Vote, ...] = ()

    def with_votes(self, votes: Iterable[Vote]) -> "Block":
        return replace(self, votes=tuple(sorted(votes, key=lambda v: v.address)))

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "parent": self.parent.hex(),
            "timestamp": self.timestamp,
            "proposer": self.proposer.hex(),
            "txs": [tx.to_dict() for tx in self.txs],
            "state_digest": self.state_digest.hex(),
            "votes": [v.to_dict() for v in self.votes],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Block":
        try:
            return cls(
                height=_int(data["height"]),
                parent=hex_to_bytes(data["parent"], 32),
                timestamp=_int(data["timestamp"]),
                proposer=hex_to_bytes(data["proposer"], ADDRESS_SIZE),
                txs=tuple(Transaction.from_dict(t) for t in data["txs"]),
                state_digest=hex_to_bytes(data["state_digest"], 32),
                votes=tuple(Vote.from_dict(v) for v in data.get("votes", [])),
            )
        except (KeyError, TypeError) as exc:
            raise DecodeError(f"malformed block: {exc}") from exc


def _int(value: Any) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise DecodeError(f"expected integer, got {value!r}")
    return value


def _str(value: Any) -> str:
    if not isinstance(value, str):
        raise DecodeError(f"expected string, got {value!r}")
    return value


def block_preimage(block: Block, parent: bytes | None = None) -> dict:
    return {
        "height": block.height,
        "parent": block.parent if parent is None else parent,
        "timestamp": block.timestamp,
        "proposer": block.proposer,
        "tx_ids": [tx.id for tx in block.txs],
        "state_digest": block.state_digest,
    }


def block_digest(block: Block, parent: bytes | None = None) -> bytes:
    """SHA-256 of the canonical block header; ``parent`` overrides the stored link."""
    return digest_of(block_preimage(block, parent))


def state_digest(state: dict) -> bytes:
    return digest_of(state)


@dataclass
class BlockResult:
    state: dict
    receipts: list[Receipt]
    state_digest: bytes


@dataclass
class Chain:
    blocks: list[Block]
    state: dict | None
    receipts: dict[bytes, Receipt] = field(default_factory=dict)
    tx_index: dict[bytes, tuple[int, int]] = field(default_factory=dict)
    digests: list[bytes] = field(default_factory=list)

    @property
    def head(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    @property
    def head_digest(self) -> bytes:
        return self.digests[-1] if self.digests else block_digest(self.head)

    def validators(self) -> list[bytes]:
        return [bytes.fromhex(a) for a in _validator_hexes(self.state["storage"]["permissioning"])]

    def enrolled(self) -> dict[bytes, str]:
        return {bytes.fromhex(a): k for a, k in self.state["storage"]["permissioning"]["nodes"].items()}

    def find_tx(self, tx_id: bytes) -> Transaction | None:
        loc = self.tx_index.get(tx_id)
        return None if loc is None else self.blocks[loc[0]].txs[loc[1]]

    def query(self, contract: str, method: str, args: dict | None = None) -> Any:
        return host.query(self.state, contract, method, args)

    def copy(self) -> "Chain":
        return Chain(
            list(self.blocks),
            json.loads(json.dumps(self.state)),
            dict(self.receipts),
            dict(self.tx_index),
            list(self.digests),
        )


def genesis_transaction(args: dict) -> Transaction:
    return Transaction(ZERO_ADDRESS, b"", 0, GENESIS_CONTRACT, GENESIS_METHOD, args)


def make_genesis(args: dict) -> Chain:
    """Chain holding only the genesis block built from ``args``."""
    tx = genesis_transaction(args)
    state = host.genesis_state(tx.args)
    block = Block(0, ZERO_DIGEST, 0, ZERO_ADDRESS, (tx,), state_digest(state))
    return _chain_from_genesis_block(block, state)


def _chain_from_genesis_block(block: Block, state: dict) -> Chain:
    tx = block.txs[0]
    receipt = Receipt(tx.id.hex(), True, events=[{"kind": "genesis", "contract": GENESIS_CONTRACT}])
    return Chain([block], state, {tx.id: receipt}, {tx.id: (0, 0)}, [block_digest(block)])


def chain_from_genesis(block: Block) -> Chain:
    """Validate a genesis block and return the one-block chain it defines."""
    if block.height != 0:
        raise BadHeight(block.height, "genesis must have height 0")
    if block.parent != ZERO_DIGEST:
        raise BadParent(0, "genesis parent must be the zero digest")
    if block.timestamp != 0 or block.proposer != ZERO_ADDRESS or block.votes:
        raise BadGenesis(0, "genesis must have timestamp 0, zero proposer and no votes")
    if len(block.txs) != 1:
        raise BadGenesis(0, "genesis must contain exactly one transaction")
    tx = block.txs[0]
    if (tx.contract, tx.method, tx.sender, tx.nonce) != (GENESIS_CONTRACT, GENESIS_METHOD, ZERO_ADDRESS, 0):
        raise BadGenesis(0, "genesis transaction must initialize the permissioning contract")
    try:
        state = host.genesis_state(tx.args)
    except (ConfigError, KeyError, TypeError) as exc:
        raise BadGenesis(0, str(exc)) from exc
    if state_digest(state) != block.state_digest:
        raise StateMismatch(0, "genesis state digest does not match its arguments")
    return _chain_from_genesis_block(block, state)


def check_transactions(chain: Chain, block: Block) -> None:
    seen = set()
    for tx in block.txs:
        if not tx.signature_valid():
            raise InvalidTxSignature(block.height, f"tx {tx.id.hex()}")
        if tx.id in seen or tx.id in chain.tx_index:
            raise DuplicateTransaction(block.height, f"tx {tx.id.hex()}")
        seen.add(tx.id)


def execute_block(chain: Chain, block: Block) -> BlockResult:
    """Run ``block.txs`` on a copy of the chain state; the chain is not modified."""
    check_transactions(chain, block)
    if not block.txs:
        return BlockResult(chain.state, [], chain.head.state_digest)
    state = json.loads(json.dumps(chain.state))
    receipts = [host.dispatch(state, tx, block.height, block.timestamp) for tx in block.txs]
    return BlockResult(state, receipts, state_digest(state))


def check_votes(chain: Chain, block: Block, block_id: bytes | None = None) -> None:
    """Proposer schedule and quorum of validator votes under the parent state."""
    validators = chain.validators()
    if not validators:
        raise InsufficientVotes(block.height, "no validators enrolled")
    if block.proposer != select_proposer(block.height, validators):
        raise BadProposer(block.height, f"{block.proposer.hex()} is not scheduled")
    block_id = block_id or block_digest(block)
    allowed = set(validators)
    signers = {v.address for v in block.votes if v.address in allowed and v.valid_for(block_id)}
    if len(block.votes) != len({v.address for v in block.votes}):
        raise InsufficientVotes(block.height, "duplicate voter")
    if len(signers) != len(block.votes):
        raise InsufficientVotes(block.height, "vote from a non-validator or with a bad signature")
    if len(signers) < quorum(len(validators)):
        raise InsufficientVotes(block.height, f"{len(signers)} of {quorum(len(validators))} votes")


def check_linkage(chain: Chain, block: Block) -> None:
    if block.height != chain.height + 1:
        raise BadHeight(block.height, f"expected height {chain.height + 1}")
    if block.parent != chain.head_digest:
        raise BadParent(block.height, "parent digest does not match the chain head")


def append_block(
    chain: Chain,
    block: Block,
    *,
    result: BlockResult | None = None,
    require_quorum: bool = True,
) -> Chain:
    """Validate ``block`` against the head and extend ``chain`` in place.

    ``result`` may carry an execution already computed for this block (the
    proposer and voters execute before commit). On any error the chain is
    left unchanged.
    """
    check_linkage(chain, block)
    block_id = block_digest(block)
    if require_quorum:
        check_votes(chain, block, block_id)
    if result is None:
        result = execute_block(chain, block)
    else:
        check_transactions(chain, block)
    if result.state_digest != block.state_digest:
        raise StateMismatch(block.height, "declared state digest differs from re-execution")
    chain.blocks.append(block)
    chain.digests.append(block_id)
    chain.state = result.state
    for i, (tx, receipt) in enumerate(zip(block.txs, result.receipts)):
        chain.receipts[tx.id] = receipt
        chain.tx_index[tx.id] = (block.height, i)
    return chain


@dataclass(frozen=True)
class ChainReport:
    ok: bool
    height: int | None = None
    kind: str | None = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.ok


def replay(blocks: Sequence[Block], *, require_quorum: bool = True) -> Chain:
    """Rebuild a chain from its blocks, validating each one; raises ChainError."""
    if not blocks:
        raise BadGenesis(0, "empty block list")
    chain = chain_from_genesis(blocks[0])
    for block in blocks[1:]:
        append_block(chain, block, require_quorum=require_quorum)
    return chain


def verify_chain(chain: Chain | Sequence[Block], *, require_quorum: bool = True) -> ChainReport:
    """Replay from genesis; report the first failing height and failure kind."""
    blocks = chain.blocks if isinstance(chain, Chain) else list(chain)
    try:
        rebuilt = replay(blocks, require_quorum=require_quorum)
    except ChainError as exc:
        return ChainReport(False, exc.height, exc.kind, exc.detail)
    if isinstance(chain, Chain) and chain.state is not None and rebuilt.state != chain.state:
        return ChainReport(False, rebuilt.height, "StateMismatch", "chain state differs from replay")
    return ChainReport(True)


def save_chain(chain: Chain | Sequence[Block], path: str | os.PathLike) -> None:
    """Write one canonical-encoded block per line."""
    blocks = chain.blocks if isinstance(chain, Chain) else chain
    with open(path, "wb") as fh:
        for block in blocks:
            fh.write(canonical_encode(block.to_dict()) + b"\n")


def load_blocks(path: str | os.PathLike) -> list[Block]:
    lines = Path(path).read_bytes().splitlines()
    return [Block.from_dict(canonical_decode(line)) for line in lines if line.strip()]


def load_chain(path: str | os.PathLike, *, require_quorum: bool = True) -> Chain:
    return replay(load_blocks(path), require_quorum=require_quorum)


def unvalidated_chain(blocks: Sequence[Block]) -> Chain:
    """Wrap blocks without replaying them (state unknown); for tamper checks."""
    return Chain(list(blocks), None)
