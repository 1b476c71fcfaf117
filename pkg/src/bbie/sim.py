"""Deterministic discrete-event network simulator.

A single-threaded loop pops ``(time_ms, seq, event)`` from a heap. Every
message send draws its link latency from one seeded ``random.Random``, so a
run is a pure function of (config, scenario). Partitions cut links between
an isolated node set and everyone else for a time window; messages sent
across a cut are dropped.

The transcript is a list of canonical JSON lines: sends, drops, commits,
external events and the final chain of every node.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

from .config import NetworkConfig
from .consensus import NetMessage, NodeState, committed_summary, handle_message, handle_tick
from .encoding import canonical_encode, sha256
from .errors import ConfigError, ScenarioRefersToUnknownNode
from .ledger import Block, Chain, Transaction, make_genesis


@dataclass(frozen=True)
class Partition:
    """Links between ``isolate`` and all other nodes are down in [start, end) seconds."""

    start: int
    end: int
    isolate: frozenset[str]

    def cuts(self, a: str, b: str, t_ms: int) -> bool:
        if not (self.start * 1000 <= t_ms < self.end * 1000):
            return False
        return (a in self.isolate) != (b in self.isolate)

    @classmethod
    def from_dict(cls, data: dict) -> "Partition":
        return cls(int(data["start"]), int(data["end"]), frozenset(data["isolate"]))

    def to_dict(self) -> dict:
        return {"start": self.start, "end": self.end, "isolate": sorted(self.isolate)}


def random_partitions(rng: random.Random, names: Sequence[str], duration: int, max_parts: int = 3) -> list[Partition]:
    """Up to ``max_parts`` partition windows, each isolating a random proper subset of ``names``."""
    names = sorted(names)
    parts = []
    for _ in range(rng.randint(0, max_parts)):
        start = rng.randrange(duration)
        end = min(duration, start + rng.randint(60, max(60, duration // 3)))
        isolate = frozenset(rng.sample(names, rng.randint(1, len(names) - 1)))
        parts.append(Partition(start, end, isolate))
    return parts


@dataclass
class SimConfig:
    network: NetworkConfig
    seed: int = 0
    latency_ms: tuple[int, int] = (20, 200)
    block_interval: int = 60
    duration: int = 3600
    partitions: Sequence[Partition] = ()
    max_block_txs: int = 500

    def __post_init__(self) -> None:
        lo, hi = self.latency_ms
        if not 0 <= lo <= hi:
            raise ConfigError("latency range must satisfy 0 <= min <= max")
        if self.block_interval <= 0 or self.duration < 0:
            raise ConfigError("block_interval must be positive and duration non-negative")
        names = {n.name for n in self.network.nodes}
        for part in self.partitions:
            unknown = part.isolate - names
            if unknown:
                raise ScenarioRefersToUnknownNode(f"partition isolates unknown nodes {sorted(unknown)}")

    @classmethod
    def from_network(cls, network: NetworkConfig, **overrides: Any) -> "SimConfig":
        sim = dict(network.sim)
        params = {
            "seed": int(sim.get("seed", 0)),
            "latency_ms": tuple(sim.get("latency_ms", (20, 200))),
            "block_interval": int(sim.get("block_interval", 60)),
            "duration": int(sim.get("duration", 3600)),
            "partitions": [Partition.from_dict(p) for p in sim.get("partitions", [])],
            "max_block_txs": int(sim.get("max_block_txs", 500)),
        }
        params.update(overrides)
        return cls(network, **params)


@dataclass(frozen=True)
class SubmitTx:
    """External event: a client hands ``tx`` to ``node`` at ``t`` simulated seconds."""

    t: int
    node: str
    tx: Transaction


@dataclass
class Transcript:
    events: list[dict] = field(default_factory=list)

    def lines(self) -> bytes:
        return b"".join(canonical_encode(e) + b"\n" for e in self.events)

    def digest(self) -> bytes:
        return sha256(self.lines())

    def commits(self) -> list[dict]:
        return [e for e in self.events if e["ev"] == "commit"]

    def finals(self) -> list[dict]:
        return [e for e in self.events if e["ev"] == "final"]

    def height_conflicts(self) -> list[int]:
        """Heights at which two different block digests were committed."""
        seen: dict[int, bytes] = {}
        bad = set()
        for e in self.commits():
            if seen.setdefault(e["height"], e["block"]) != e["block"]:
                bad.add(e["height"])
        return sorted(bad)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.lines())


class Simulator:
    """Event loop hosting one NodeState per configured node."""

    def __init__(self, config: SimConfig, genesis: Chain | None = None):
        self.config = config
        self.rng = random.Random(config.seed)
        self.now = 0
        self._heap: list[tuple[int, int, str, Any]] = []
        self._seq = 0
        self.transcript = Transcript()
        genesis = genesis or make_genesis(config.network.genesis_args())
        self.nodes: dict[str, NodeState] = {}
        for spec in config.network.nodes:
            self.nodes[spec.name] = NodeState(
                spec.name, spec.key, genesis.copy(), config.max_block_txs, stall_ms=2 * config.block_interval * 1000
            )
        self._by_address = {n.address: name for name, n in self.nodes.items()}
        self.commit_listeners: list[Callable[[str, Block, int], None]] = []
        self._schedule(config.block_interval * 1000, "tick", None)

    # scheduling

    def _schedule(self, t_ms: int, kind: str, data: Any) -> None:
        heapq.heappush(self._heap, (t_ms, self._seq, kind, data))
        self._seq += 1

    def at(self, t_ms: int, fn: Callable[[], None]) -> None:
        """Run ``fn`` at simulated time ``t_ms`` (ms)."""
        self._schedule(t_ms, "call", fn)

    def submit(self, node: str, tx: Transaction, t_ms: int | None = None) -> None:
        if node not in self.nodes:
            raise ScenarioRefersToUnknownNode(node)
        self._schedule(self.now if t_ms is None else t_ms, "submit", (node, tx))

    def log(self, ev: str, **fields: Any) -> None:
        self.transcript.events.append({"t": self.now, "ev": ev, **fields})

    def node_name(self, address: bytes) -> str:
        return self._by_address.get(address, address.hex())

    # transport

    def _send(self, sender: str, messages: Iterable[NetMessage]) -> None:
        lo, hi = self.config.latency_ms
        for msg in messages:
            targets = [msg.to] if msg.to is not None else [a for a in self._by_address if a != msg.sender]
            for addr in targets:
                dest = self._by_address.get(addr)
                if dest is None:
                    continue
                summary = {"kind": msg.kind, "from": sender, "to": dest, **msg.summary()}
                if any(p.cuts(sender, dest, self.now) for p in self.config.partitions):
                    self.log("drop", reason="partition", **summary)
                    continue
                delay = self.rng.randint(lo, hi)
                self.log("send", deliver_at=self.now + delay, **summary)
                self._schedule(self.now + delay, "deliver", (dest, msg))

    def _dispatch(self, kind: str, data: Any) -> None:
        if kind == "tick":
            for name, node in self.nodes.items():
                self._run_node(name, lambda n=node: handle_tick(n, self.now))
            self._schedule(self.now + self.config.block_interval * 1000, "tick", None)
        elif kind == "deliver":
            dest, msg = data
            node = self.nodes[dest]
            self._run_node(dest, lambda: handle_message(node, msg, self.now))
        elif kind == "submit":
            name, tx = data
            node = self.nodes[name]
            self.log("external", node=name, action="submit", tx=tx.id)
            self._run_node(name, lambda: node.submit(tx, self.now))
        elif kind == "call":
            data()

    def _run_node(self, name: str, step: Callable[[], list[NetMessage]]) -> None:
        node = self.nodes[name]
        before = node.chain.height
        out = step()
        for height in range(before + 1, node.chain.height + 1):
            block = node.chain.blocks[height]
            self.log("commit", node=name, height=height, block=node.chain.digests[height], txs=len(block.txs))
            for listener in self.commit_listeners:
                listener(name, block, self.now)
        self._send(name, out)

    def run(self, until_s: int | None = None) -> Transcript:
        end = (self.config.duration if until_s is None else until_s) * 1000
        while self._heap and self._heap[0][0] <= end:
            t, _, kind, data = heapq.heappop(self._heap)
            self.now = t
            self._dispatch(kind, data)
        self.now = end
        return self.transcript

    def finish(self) -> Transcript:
        for name, node in self.nodes.items():
            summary = committed_summary(node)
            summary["node"] = name
            summary["counters"] = {k: node.counters[k] for k in sorted(node.counters)}
            self.log("final", **summary)
        return self.transcript


def run_sim(config: SimConfig, scenario: Sequence[SubmitTx] = ()) -> Transcript:
    """Run ``config`` for its duration with the given external submissions."""
    sim = Simulator(config)
    for event in scenario:
        sim.submit(event.node, event.tx, event.t * 1000)
    sim.run()
    return sim.finish()
