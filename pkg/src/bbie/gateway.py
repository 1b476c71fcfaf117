"""Explorer and write gateway over one node's committed state.

:class:`Gateway` is a pure request handler, ``handle(method, path,
headers, body) -> Response``, so the same code path serves the HTTP server,
the scenario runner and the tests. Reads are public. Writes need a bearer
token from the configured issuer: a bad or expired token yields 401; a
role that the target method does not admit yields 403.

Mutations are serialized through ``lock``; reads take a snapshot of the
chain under the lock and render it outside.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable

from .anchoring import PublicChainStub
from .encoding import canonical_encode, is_hex
from .errors import BadSignature, BBIEError, DecodeError, TokenError
from .identity import TokenClaims, verify_token
from .ledger import Chain, Transaction
from .tangle import CertifiedBatch, DagMessage, IngestCoordinator, Tangle

DEFAULT_INGEST_ROLES = ("wine_producer", "cork_producer", "baas_provider")

_STATUS_BY_KIND = {
    "DecodeError": 400,
    "UnencodableValue": 400,
    "BadArguments": 400,
    "UnknownParent": 400,
    "DuplicateId": 409,
    "DuplicateTransaction": 409,
}


@dataclass(frozen=True)
class Response:
    status: int
    body: Any

    def encode(self) -> bytes:
        return canonical_encode(self.body)

    @property
    def ok(self) -> bool:
        return self.status < 400


def _error(status: int, error: str, detail: str = "") -> Response:
    return Response(status, {"error": error, "detail": detail})


def snapshot(chain: Chain) -> Chain:
    # blocks and receipts are append-only and state dicts are replaced, never mutated
    return Chain(list(chain.blocks), chain.state, dict(chain.receipts), dict(chain.tx_index), list(chain.digests))


@dataclass
class Gateway:
    chain: Callable[[], Chain]
    issuer_public: bytes
    clock: Callable[[], int]
    submit: Callable[[Transaction], None]
    ingestor: IngestCoordinator | None = None
    tangle: Tangle | None = None  # read-only tangle when there is no ingestor
    stub: PublicChainStub | None = None
    on_ingest: Callable[[DagMessage, list[CertifiedBatch]], None] = lambda msg, batches: None
    ingest_roles: tuple[str, ...] = DEFAULT_INGEST_ROLES
    contract: str = "traceability"
    token_clock: Callable[[], int] | None = None  # defaults to ``clock``
    lock: threading.RLock = field(default_factory=threading.RLock)
    accepted_txs: list[bytes] = field(default_factory=list)
    accepted_messages: list[bytes] = field(default_factory=list)
    _accepted: set[bytes] = field(default_factory=set, repr=False)

    # entry point

    def handle(self, method: str, path: str, headers: dict | None = None, body: bytes = b"") -> Response:
        parts = [p for p in path.split("?")[0].split("/") if p]
        try:
            if method == "GET":
                return self._get(parts)
            if method == "POST" and parts == ["tx"]:
                return self._post_tx(headers or {}, body)
            if method == "POST" and parts == ["ingest"]:
                return self._post_ingest(headers or {}, body)
        except BBIEError as exc:
            status = 404 if exc.kind.startswith("Unknown") and exc.kind != "UnknownParent" else 400
            return _error(_STATUS_BY_KIND.get(exc.kind, status), exc.kind, str(exc))
        return _error(404, "NotFound", f"no route for {method} {path}")

    # reads

    def _get(self, parts: list[str]) -> Response:
        with self.lock:
            chain = snapshot(self.chain())
            stub_records = self.stub.records() if self.stub else []
            message = None
            tangle = self.ingestor.tangle if self.ingestor else self.tangle
            if len(parts) == 3 and parts[:2] == ["tangle", "messages"] and tangle and is_hex(parts[2], 32):
                msg = tangle.messages.get(bytes.fromhex(parts[2]))
                if msg is not None:
                    message = {**msg.to_dict(), "confirmed": msg.id in tangle.confirmed}
        match parts:
            case ["blocks", "latest"]:
                return Response(200, self._block(chain, chain.height))
            case ["blocks", height] if height.isdigit():
                if int(height) > chain.height:
                    return _error(404, "UnknownBlock", f"height {height} > {chain.height}")
                return Response(200, self._block(chain, int(height)))
            case ["tx", tx_id] if is_hex(tx_id, 32):
                loc = chain.tx_index.get(bytes.fromhex(tx_id))
                if loc is None:
                    return _error(404, "UnknownTransaction", tx_id)
                tx = chain.blocks[loc[0]].txs[loc[1]]
                receipt = chain.receipts[tx.id].to_dict()
                return Response(200, {"tx": tx.to_dict(), "height": loc[0], "index": loc[1], "receipt": receipt})
            case ["receipts", tx_id] if is_hex(tx_id, 32):
                receipt = chain.receipts.get(bytes.fromhex(tx_id))
                if receipt is None:
                    return _error(404, "UnknownTransaction", tx_id)
                return Response(200, receipt.to_dict())
            case ["trace", lot_id]:
                return Response(200, chain.query(self.contract, "get_trace", {"lot_id": lot_id}))
            case ["lots"]:
                return Response(200, chain.query(self.contract, "list_lots", {}))
            case ["anchors"]:
                return Response(200, [r.to_args() for r in stub_records])
            case ["tangle", "messages", msg_id]:
                if message is None:
                    return _error(404, "UnknownMessage", msg_id)
                return Response(200, message)
        return _error(404, "NotFound", "/" + "/".join(parts))

    @staticmethod
    def _block(chain: Chain, height: int) -> dict:
        return {"digest": chain.digests[height].hex(), **chain.blocks[height].to_dict()}

    # writes

    def authenticate(self, headers: dict) -> TokenClaims | Response:
        auth = next((v for k, v in headers.items() if k.lower() == "authorization"), "")
        if not auth.startswith("Bearer "):
            return _error(401, "MissingToken", "expected 'Authorization: Bearer <token>'")
        try:
            now = (self.token_clock or self.clock)()
            return verify_token(self.issuer_public, auth[len("Bearer "):].strip(), now)
        except (TokenError, BadSignature) as exc:
            return _error(401, exc.kind, str(exc))

    def check_tx(self, claims: TokenClaims, tx: Transaction, chain: Chain) -> Response | None:
        """Authorization decision for a transaction; None means admitted."""
        if tx.sender.hex() != claims.sub:
            return _error(403, "SubjectMismatch", "token subject is not the transaction sender")
        contracts = chain.state["contracts"]
        if tx.contract not in contracts:
            return _error(404, "UnknownContract", tx.contract)
        methods = contracts[tx.contract]["methods"]
        if tx.method not in methods:
            return _error(404, "UnknownMethod", f"{tx.contract}.{tx.method}")
        acl = methods[tx.method]
        if acl is not None and claims.role not in acl:
            return _error(403, "Forbidden", f"role {claims.role!r} may not call {tx.contract}.{tx.method}")
        if not tx.signature_valid():
            return _error(400, "BadSignature", "transaction signature does not verify")
        return None

    def _post_tx(self, headers: dict, body: bytes) -> Response:
        claims = self.authenticate(headers)
        if isinstance(claims, Response):
            return claims
        tx = Transaction.from_dict(_json(body))
        with self.lock:
            chain = self.chain()
            refused = self.check_tx(claims, tx, chain)
            if refused is not None:
                return refused
            if tx.id in chain.tx_index or tx.id in self._accepted:
                return _error(409, "DuplicateTransaction", tx.id.hex())
            self.submit(tx)
            self.accepted_txs.append(tx.id)
            self._accepted.add(tx.id)
        return Response(202, {"tx_id": tx.id.hex()})

    def _post_ingest(self, headers: dict, body: bytes) -> Response:
        claims = self.authenticate(headers)
        if isinstance(claims, Response):
            return claims
        if claims.role not in self.ingest_roles:
            return _error(403, "Forbidden", f"role {claims.role!r} may not ingest telemetry")
        if self.ingestor is None:
            return _error(404, "NoIngest", "this gateway has no ingest coordinator")
        record = _json(body)
        with self.lock:
            msg, batches = self.ingestor.ingest(record, self.clock())
            self.accepted_messages.append(msg.id)
            self.on_ingest(msg, batches)
        return Response(202, {"id": msg.id.hex(), "checkpoints": len(batches)})


def _json(body: bytes) -> Any:
    try:
        return json.loads(body)
    except (ValueError, UnicodeDecodeError) as exc:
        raise DecodeError(f"request body is not JSON: {exc}") from exc


def make_server(gateway: Gateway, host: str = "127.0.0.1", port: int = 8545) -> ThreadingHTTPServer:
    """HTTP front end; raises OSError when the port is in use."""

    class Handler(BaseHTTPRequestHandler):
        def _serve(self, method: str) -> None:
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length) if length else b""
            resp = gateway.handle(method, self.path, dict(self.headers.items()), body)
            payload = resp.encode()
            self.send_response(resp.status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def do_GET(self) -> None:  # noqa: N802
            self._serve("GET")

        def do_POST(self) -> None:  # noqa: N802
            self._serve("POST")

        def log_message(self, format: str, *args: Any) -> None:
            pass

    return ThreadingHTTPServer((host, port), Handler)
