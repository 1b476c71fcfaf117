"""A whole simulated deployment: validators, the gateway node, the ingest
coordinator, the anchor service and the public-chain stub.

Everything runs inside one :class:`~bbie.sim.Simulator`. The gateway node is
the node whose committed chain backs the explorer and receives gateway
writes; the anchor node's commits drive event anchors. Certified tangle
batches are submitted to the gateway node by the coordinator.
"""

from __future__ import annotations

import json
import random
from collections import defaultdict

from .anchoring import AnchorService, PublicChainStub
from .config import NetworkConfig
from .encoding import canonical_encode
from .gateway import DEFAULT_INGEST_ROLES, Gateway, Response
from .identity import Token, issue_token
from .keys import KeyPair
from .ledger import Block, Chain, Transaction
from .sim import SimConfig, Simulator
from .tangle import CertifiedBatch, DagMessage, IngestCoordinator, sign_record, summarize_batch

PERMISSIONED = "traceability"


class Deployment:
    def __init__(self, config: NetworkConfig, sim_config: SimConfig | None = None):
        self.config = config
        self.sim_config = sim_config or SimConfig.from_network(config)
        seed = self.sim_config.seed
        self.sim = Simulator(self.sim_config)
        simple = [n.name for n in config.nodes if n.kind == "simple" and n.enrolled]
        self.gateway_node = config.tangle.get("node") or (simple or [config.nodes[0].name])[0]
        self.anchor_node = config.anchor.get("node") or self.gateway_node
        self.token_rng = random.Random(f"tokens/{seed}")
        self.nonces: dict[str, int] = defaultdict(int)
        self.tokens: dict[str, Token] = {}
        self.issued: list[Token] = []
        self.batch_txs: list[tuple[CertifiedBatch, bytes]] = []

        coordinator = config.coordinator
        self.ingestor = None
        if coordinator is not None:
            self.ingestor = IngestCoordinator(
                coordinator.key,
                seed=seed,
                checkpoint_every=int(config.tangle["checkpoint_every"]),
                checkpoint_interval=int(config.tangle["checkpoint_interval"]),
            )
        self._armed: int | None = None

        anchor = config.anchor
        self.stub = PublicChainStub(config.key(anchor.get("stub_validator") or config.issuer))
        self.anchors = AnchorService(
            config.anchor_policy, config.key(anchor.get("service") or config.issuer), self.stub, config.chain_id
        )
        interval = config.anchor_policy.interval
        for k in range(1, self.sim_config.duration // interval + 1):
            self.sim.at(k * interval * 1000, self._anchor_tick)
        self.sim.commit_listeners.append(self._on_commit)

        self.gateway = Gateway(
            chain=lambda: self.sim.nodes[self.gateway_node].chain,
            issuer_public=config.key(config.issuer).public,
            clock=self.now,
            submit=lambda tx: self.sim.submit(self.gateway_node, tx),
            ingestor=self.ingestor,
            stub=self.stub,
            on_ingest=self._on_ingest,
            ingest_roles=tuple(config.raw.get("ingest_roles", DEFAULT_INGEST_ROLES)),
        )

    # clocks and views

    def now(self) -> int:
        return self.sim.now // 1000

    @property
    def chain(self) -> Chain:
        return self.sim.nodes[self.gateway_node].chain

    def node_chain(self, name: str) -> Chain:
        return self.sim.nodes[name].chain

    # anchoring

    def _anchor_tick(self) -> None:
        self.anchors.tick(self.node_chain(self.anchor_node), self.now())

    def _on_commit(self, node: str, block: Block, now_ms: int) -> None:
        if node == self.anchor_node:
            self.anchors.on_commit(self.node_chain(node), block, now_ms // 1000)

    # telemetry

    def _on_ingest(self, msg: DagMessage, batches: list[CertifiedBatch]) -> None:
        self._certify(batches)
        self._arm()

    def _arm(self) -> None:
        deadline = self.ingestor.deadline
        if deadline is not None and deadline != self._armed:
            self._armed = deadline
            self.sim.at(max(deadline, self.now()) * 1000, self._poll)

    def _poll(self) -> None:
        with self.gateway.lock:
            self._certify(self.ingestor.poll(self.now()))
            self._armed = None
            self._arm()

    def _certify(self, batches: list[CertifiedBatch]) -> None:
        key = self.config.coordinator.key
        for batch in batches:
            tx = summarize_batch(batch, key, self._next_nonce(self.config.coordinator.name), PERMISSIONED)
            self.batch_txs.append((batch, tx.id))
            self.sim.submit(self.gateway_node, tx)

    # clients

    def _next_nonce(self, name: str) -> int:
        nonce = self.nonces[name]
        self.nonces[name] += 1
        return nonce

    def role_of(self, name: str) -> str | None:
        addr = self.config.key(name).address.hex()
        role = self.chain.query("identity", "role_of", {"addr": addr})
        return role or self.config.role(name)

    def token_for(self, name: str) -> Token:
        """Cached bearer token for principal ``name``, re-issued when expired."""
        now = self.now()
        token = self.tokens.get(name)
        role = self.role_of(name)
        if token is None or now >= token.claims.exp or token.claims.role != role:
            if role is None:
                raise KeyError(f"principal {name!r} has no role and cannot obtain a token")
            token = issue_token(
                self.config.key(self.config.issuer), self.config.key(name).address.hex(), role, now,
                self.config.token_ttl, rng=self.token_rng, vocabulary=self.config.vocabulary,
            )
            self.tokens[name] = token
            self.issued.append(token)
        return token

    def build_tx(self, actor: str, contract: str, method: str, args: dict) -> Transaction:
        return Transaction.create(self.config.key(actor), contract, method, args, self._next_nonce(actor))

    def post_tx(self, actor: str, tx: Transaction, token: Token | str | None = None) -> Response:
        token = self.token_for(actor) if token is None else token
        body = canonical_encode(tx.to_dict())
        return self.gateway.handle("POST", "/tx", {"Authorization": f"Bearer {token}"}, body)

    def call(self, actor: str, contract: str, method: str, args: dict) -> tuple[Transaction, Response]:
        tx = self.build_tx(actor, contract, method, args)
        return tx, self.post_tx(actor, tx)

    def ingest(self, actor: str, device: KeyPair, topic: str, payload: dict) -> Response:
        record = sign_record(device, topic, payload, self.now())
        token = self.token_for(actor)
        return self.gateway.handle("POST", "/ingest", {"Authorization": f"Bearer {token}"}, json.dumps(record).encode())

    def get(self, path: str) -> Response:
        return self.gateway.handle("GET", path)

    # running

    def run(self) -> None:
        self.sim.run()
        self.sim.finish()
