"""Requirement checks run at the end of a scenario.

Each check returns a :class:`Check`. Several of them compare the system
against an independent recomputation: traces are refolded from the
committed transaction log, batch digests are recomputed by a full ancestor
walk, and anchors are checked against block digests recomputed from block
content.
"""

from __future__ import annotations

import graphlib
import random
from collections import Counter
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Any

from .anchoring import INTERVAL, STAGE_COMPLETED, Mismatch, Verified, verify_anchor
from .config import default_acl
from .contracts.host import NATIVE
from .encoding import canonical_encode, digest_of
from .errors import BBIEError
from .gateway import DEFAULT_INGEST_ROLES
from .identity import CLAIM_FIELDS, Token, issue_token, verify_token
from .keys import KeyPair
from .ledger import Block, Chain, Transaction, block_digest, verify_chain
from .sim import SimConfig, Simulator, random_partitions
from .tangle import DagMessage, Tangle

if TYPE_CHECKING:
    from .network import Deployment


@dataclass(frozen=True)
class Check:
    requirement: str
    name: str
    ok: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return {"requirement": self.requirement, "check": self.name, "ok": self.ok, "detail": self.detail}


# traceability oracle


def fold_traces(chain: Chain, contract: str = "traceability") -> dict[str, dict]:
    """Rebuild every lot trace from genesis args and the committed, successful txs."""
    templates = chain.blocks[0].txs[0].args["templates"]
    roles = dict(templates["identity"]["params"].get("roles", {}))
    params = templates[contract]["params"]
    schedules, by_role = params["schedules"], params["role_schedules"]
    lots: dict[str, dict] = {}
    batches: dict[str, dict] = {}
    for block in chain.blocks[1:]:
        for tx in block.txs:
            if not chain.receipts[tx.id].ok:
                continue
            a, sender = tx.args, tx.sender.hex()
            if (tx.contract, tx.method) == ("identity", "bind_address_role"):
                roles[a["addr"].lower()] = a["role"]
            if tx.contract != contract:
                continue
            if tx.method == "register_lot":
                role = roles[sender]
                lots[a["lot_id"]] = {
                    "product": a["product"], "owner_role": role, "schedule": by_role[role],
                    "stages": [], "components": [], "blocked": [],
                }
            elif tx.method == "record_stage":
                lots[a["lot_id"]]["stages"].append({
                    "name": a["stage"], "actor": sender, "ts": block.timestamp, "height": block.height,
                    "batch_digest": a.get("batch_digest"), "documents": a.get("documents") or [],
                    "certifications": [],
                })
            elif tx.method == "certify_stage":
                lot = lots[a["lot_id"]]
                stage = next(s for s in lot["stages"] if s["name"] == a["stage"])
                stage["certifications"].append(
                    {"authority": sender, "role": roles[sender], "verdict": a["verdict"], "ts": block.timestamp}
                )
                if a["verdict"] == "Rejected" and a["stage"] not in lot["blocked"]:
                    lot["blocked"].append(a["stage"])
                if a["verdict"] == "Approved" and a["stage"] in lot["blocked"]:
                    lot["blocked"].remove(a["stage"])
            elif tx.method == "link_component":
                lots[a["lot_id"]]["components"].append(a["component"])
            elif tx.method == "record_telemetry":
                batches[a["batch_digest"]] = {
                    "count": a["count"], "t_min": a["t_min"], "t_max": a["t_max"], "topics": a["topics"],
                    "seq": len(batches), "height": block.height,
                }

    def view(lot_id: str) -> dict:
        lot = lots[lot_id]
        schedule = schedules[lot["schedule"]]
        stages = []
        for s in lot["stages"]:
            b = batches.get(s["batch_digest"]) if s["batch_digest"] else None
            stages.append({**s, "batch": None if b is None else {"batch_digest": s["batch_digest"], **b}})
        return {
            "lot_id": lot_id, "product": lot["product"], "owner_role": lot["owner_role"],
            "schedule": list(schedule), "complete": len(lot["stages"]) == len(schedule),
            "blocked": list(lot["blocked"]), "stages": stages,
            "components": [view(c) for c in lot["components"]],
        }

    return {lot_id: view(lot_id) for lot_id in sorted(lots)}


def check_traces(chain: Chain) -> Check:
    lots = chain.query("traceability", "list_lots")
    oracle = fold_traces(chain)
    live = {lot: chain.query("traceability", "get_trace", {"lot_id": lot}) for lot in lots}
    bad = sorted(set(oracle) ^ set(live) | {k for k in live if oracle.get(k) != live[k]})
    return Check("traceability", "get_trace equals replay fold", not bad and bool(live),
                 f"{len(live)} lots" if not bad else f"differs for {bad}")


def check_expectations(log: list[dict], chain: Chain) -> Check:
    failures = []
    for entry in log:
        expected_status = entry["expect"].get("status", 202)
        if entry["status"] != expected_status:
            failures.append(f"t={entry['t']} {entry['action']}: HTTP {entry['status']} != {expected_status}")
            continue
        if entry.get("tx") is None or entry["status"] != 202:
            continue
        receipt = chain.receipts.get(bytes.fromhex(entry["tx"]))
        want = entry["expect"].get("receipt", "ok")
        got = None if receipt is None else ("ok" if receipt.ok else receipt.error)
        if got != want:
            failures.append(f"t={entry['t']} {entry['action']}: receipt {got} != {want}")
    return Check("traceability", "scenario expectations (order, blocking, ACL)", not failures,
                 f"{len(log)} writes" if not failures else "; ".join(failures[:5]))


# identity, privacy, confidentiality


def token_window_check(issuer: KeyPair, rng: random.Random) -> list[str]:
    problems = []
    token = issue_token(issuer, "00" * 20, "external_user", 1000, 60, rng=rng)
    for now, accept in ((999, False), (1000, True), (1059, True), (1060, False)):
        try:
            verify_token(issuer.public, token.encode(), now)
            ok = True
        except BBIEError:
            ok = False
        if ok != accept:
            problems.append(f"now={now} accepted={ok}")
    return problems


def token_fuzz(issuer: KeyPair, cases: int, rng: random.Random) -> int:
    """Number of false accepts over (wrong key | wrong clock | flipped bit) cases."""
    false_accepts = 0
    other = KeyPair.from_name("fuzz/other-issuer")
    for i in range(cases):
        iat = rng.randrange(0, 10**6)
        ttl = rng.randint(1, 7200)
        token = issue_token(issuer, rng.randbytes(20).hex(), "wine_producer", iat, ttl, rng=rng)
        mode = i % 3
        key, now, wire = issuer.public, rng.randrange(iat, iat + ttl), token.encode()
        if mode == 0:
            key = other.public
        elif mode == 1:
            now = rng.choice([iat - rng.randint(1, 10**4), iat + ttl + rng.randint(0, 10**4)])
        else:
            raw = bytearray(wire.encode())
            pos = rng.randrange(len(raw))
            raw[pos] ^= 1 << rng.randrange(7)
            wire = raw.decode("ascii")
        try:
            claims = verify_token(key, wire, now)
        except (BBIEError, ValueError):
            continue
        # a flip that still decodes to the issued claims and signature forges nothing
        if mode == 2 and claims == token.claims and Token.decode(wire).sig == token.sig:
            continue
        false_accepts += 1
    return false_accepts


def acl_matrix(chain: Chain, vocabulary: list[str]) -> list[str]:
    """Differences between the live ACLs and the documented table."""
    documented = default_acl(vocabulary)
    contracts = chain.state["contracts"]
    problems = []
    for cid, methods in documented.items():
        live = contracts.get(cid, {}).get("methods", {})
        for method, roles in methods.items():
            for role in vocabulary:
                allowed = live.get(method) is None or role in live[method]
                if allowed != (role in roles):
                    problems.append(f"{cid}.{method}/{role}")
    return problems


def check_identity(dep: "Deployment", rng: random.Random, fuzz_cases: int) -> Check:
    issuer = dep.config.key(dep.config.issuer)
    problems = token_window_check(issuer, rng)
    false_accepts = token_fuzz(issuer, fuzz_cases, rng)
    matrix = acl_matrix(dep.chain, dep.config.vocabulary)
    ok = not problems and false_accepts == 0 and not matrix
    detail = f"window ok, {fuzz_cases} fuzz cases, 0 false accepts, ACL matrix matches"
    if not ok:
        detail = f"window={problems} false_accepts={false_accepts} acl={matrix[:5]}"
    return Check("secure identity", "token window, fuzz and ACL matrix", ok, detail)


def check_privacy(dep: "Deployment") -> list[Check]:
    bad = []
    for token in dep.issued:
        claims = Token.decode(token.encode()).claims.to_dict()
        if tuple(sorted(claims)) != tuple(sorted(CLAIM_FIELDS)) or len(claims["sub"]) != 40:
            bad.append(claims["id"])
    chain_bytes = b"".join(canonical_encode(b.to_dict()) for b in dep.chain.blocks)
    leaked = [t.claims.id for t in dep.issued if t.claims.id.encode() in chain_bytes]
    scan = Check("privacy", "tokens carry only id/sub/role/iat/exp and never reach the chain",
                 not bad and not leaked and bool(dep.issued), f"{len(dep.issued)} tokens scanned")

    issuer = dep.config.key(dep.config.issuer)
    actor = "winery"
    tx = dep.build_tx(actor, "traceability", "list_lots", {})
    good = dep.token_for(actor)
    now = dep.now()
    expired = issue_token(issuer, good.claims.sub, good.claims.role, now - 2 * dep.config.token_ttl,
                          dep.config.token_ttl, rng=random.Random(1))
    foreign = issue_token(KeyPair.from_name("rogue-issuer"), good.claims.sub, good.claims.role, now, 60,
                          rng=random.Random(2))
    wire = good.encode()
    tampered = wire[:-2] + ("A" if wire[-2] != "A" else "B") + wire[-1]
    probes = {"expired": expired.encode(), "foreign": foreign.encode(), "tampered": tampered, "garbage": "x.y"}
    statuses = {name: dep.post_tx(actor, tx, token).status for name, token in probes.items()}
    statuses["missing"] = dep.gateway.handle("POST", "/tx", {}, canonical_encode(tx.to_dict())).status
    statuses["ingest_expired"] = dep.gateway.handle(
        "POST", "/ingest", {"Authorization": f"Bearer {expired.encode()}"}, b"{}"
    ).status
    unauthorized = all(s == 401 for s in statuses.values())
    probe_tx = dep.build_tx("consumer", "traceability", "register_lot", {"lot_id": "probe", "product": "x"})
    forbidden = dep.post_tx("consumer", probe_tx).status
    paths = Check("privacy", "401 for bad/expired/missing tokens, 403 for disallowed role",
                  unauthorized and forbidden == 403, f"401 probes {statuses}, 403 probe {forbidden}")
    return [scan, paths]


def check_confidentiality(dep: "Deployment") -> Check:
    """Every (role, write method) pair is refused with 403 exactly when the ACL excludes it."""
    issuer = dep.config.key(dep.config.issuer)
    chain = dep.chain
    documented = default_acl(dep.config.vocabulary)
    documented_ingest = set(dep.config.raw.get("ingest_roles", DEFAULT_INGEST_ROLES))
    rng = random.Random(0)
    mismatches, pairs = [], 0
    for role in dep.config.vocabulary:
        key = KeyPair.from_name(f"probe/{role}")
        claims = issue_token(issuer, key.address.hex(), role, dep.now(), 60, rng=rng).claims
        for cid, methods in documented.items():
            template = chain.state["contracts"][cid]["template"]
            for method in methods:
                if NATIVE[template][0][method].read_only:
                    continue
                pairs += 1
                tx = Transaction.create(key, cid, method, {}, 0)
                refused = dep.gateway.check_tx(claims, tx, chain)
                denied = refused is not None and refused.status == 403
                if denied == (role in methods[method]):
                    mismatches.append(f"{role}:{cid}.{method}")
        token = issue_token(issuer, key.address.hex(), role, dep.now(), 60, rng=rng)
        # an empty record is refused with 400 after authorization, so nothing is attached
        status = dep.gateway.handle("POST", "/ingest", {"Authorization": f"Bearer {token}"}, b"{}").status
        if (status == 403) == (role in documented_ingest):
            mismatches.append(f"{role}:ingest")
    return Check("confidentiality", "403 matrix over roles x write methods", not mismatches,
                 f"{pairs} pairs" if not mismatches else f"mismatches {mismatches[:5]}")


# integrity


def _mutations(block: Block) -> list[Block]:
    out = [
        replace(block, timestamp=block.timestamp ^ 1),
        replace(block, state_digest=bytes([block.state_digest[0] ^ 1]) + block.state_digest[1:]),
        replace(block, proposer=bytes([block.proposer[-1] ^ 0x80]) + block.proposer[1:]),
    ]
    if block.txs:
        tx = block.txs[0]
        out.append(replace(block, txs=(replace(tx, nonce=tx.nonce + 1),) + block.txs[1:]))
    return out


def check_integrity(dep: "Deployment") -> list[Check]:
    chain = dep.node_chain(dep.anchor_node)
    report = verify_chain(chain)
    verdict = verify_anchor(dep.stub, chain)
    records = dep.stub.records(dep.config.chain_id)
    checks = [Check("integrity", "verify_chain and verify_anchor", bool(report) and isinstance(verdict, Verified),
                    f"chain={'ok' if report else report.kind} anchors={type(verdict).__name__}")]
    if records:
        first = min(r.height for r in records)
        caught, tried = 0, 0
        for h in sorted({0, first // 2, first}):
            for mutated in _mutations(chain.blocks[h]):
                blocks = list(chain.blocks)
                blocks[h] = mutated
                tried += 1
                caught += verify_anchor(dep.stub, blocks, dep.config.chain_id) == Mismatch(first)
        checks.append(Check("integrity", "tampering at or before the first anchor yields Mismatch",
                            caught == tried, f"{caught}/{tried} mutations detected at height {first}"))

    interval = [r for r in records if r.reason["kind"] == INTERVAL]
    expected_interval = dep.sim_config.duration // dep.config.anchor_policy.interval
    events = [
        (h, e["lot_id"], e["stage"])
        for h, block in enumerate(chain.blocks)
        for tx in block.txs
        for e in chain.receipts[tx.id].events
        if e["kind"] == STAGE_COMPLETED
    ]
    anchored = Counter(
        (r.height, r.reason["lot_id"], r.reason["stage"]) for r in records if r.reason["kind"] == STAGE_COMPLETED
    )
    one_each = all(anchored[e] == 1 for e in events) and sum(anchored.values()) == len(events)
    checks.append(Check(
        "integrity", "anchor cadence", len(interval) == expected_interval and one_each,
        f"{len(interval)} interval anchors (expected {expected_interval}), "
        f"{sum(anchored.values())} stage anchors for {len(events)} stage events",
    ))
    return checks


# resilience


def partition_runs(network, runs: int, seed: int, duration: int = 3600, block_interval: int = 60,
                   latency_ms: tuple[int, int] = (10, 100)) -> tuple[int, list[int], bool]:
    """Randomized partition runs among the validators.

    Returns (runs with height conflicts, final min heights, determinism of the first seed).
    """
    rng = random.Random(seed)
    validators = [n.name for n in network.nodes if n.kind == "validator" and n.enrolled]
    conflicts, heights, digests = 0, [], []
    for i in range(runs):
        run_seed = rng.getrandbits(32)
        parts = random_partitions(random.Random(run_seed), validators, duration)
        cfg = SimConfig(network, run_seed, latency_ms, block_interval, duration, parts)
        sim = Simulator(cfg)
        transcript = sim.run()
        sim.finish()
        conflicts += bool(transcript.height_conflicts())
        heights.append(min(n.chain.height for n in sim.nodes.values()))
        if i == 0:
            digests.append(transcript.digest())
            again = Simulator(cfg)
            again.run()
            digests.append(again.finish().digest())
    return conflicts, heights, len(set(digests)) <= 1


def check_resilience(dep: "Deployment", runs: int, seed: int) -> list[Check]:
    conflicts, heights, deterministic = partition_runs(dep.config, runs, seed)
    own = dep.sim.transcript.height_conflicts()
    return [
        Check("resilience", "randomized partition runs: no conflicting commits, reproducible",
              conflicts == 0 and deterministic, f"{runs} runs, {conflicts} with conflicts, min heights {heights}"),
        Check("resilience", "scenario run (with partition) has no conflicting commits", not own,
              f"conflicting heights {own}" if own else "none"),
    ]


# interoperability


def check_interop(dep: "Deployment") -> Check:
    chain = dep.chain
    problems = []
    for h in range(chain.height + 1):
        body = dep.get(f"/blocks/{h}").body
        block = Block.from_dict({k: v for k, v in body.items() if k != "digest"})
        if block_digest(block).hex() != body["digest"] or block.to_dict() != chain.blocks[h].to_dict():
            problems.append(f"block {h}")
    latest = dep.get("/blocks/latest").body
    if latest["height"] != chain.height:
        problems.append("latest")
    for tx_id in dep.gateway.accepted_txs:
        body = dep.get(f"/tx/{tx_id.hex()}").body
        if Transaction.from_dict(body["tx"]).id != tx_id:
            problems.append(f"tx {tx_id.hex()[:12]}")
        if dep.get(f"/receipts/{tx_id.hex()}").body != body["receipt"]:
            problems.append(f"receipt {tx_id.hex()[:12]}")
    for lot in chain.query("traceability", "list_lots"):
        if dep.get(f"/trace/{lot}").body != chain.query("traceability", "get_trace", {"lot_id": lot}):
            problems.append(f"trace {lot}")
    if dep.get("/anchors").body != [r.to_args() for r in dep.stub.records()]:
        problems.append("anchors")
    for msg_id in dep.gateway.accepted_messages:
        body = dep.get(f"/tangle/messages/{msg_id.hex()}").body
        fields = {k: v for k, v in body.items() if k not in ("id", "confirmed")}
        parents = tuple(bytes.fromhex(p) for p in fields.pop("parents"))
        if DagMessage.from_record(fields, parents).id != msg_id:
            problems.append(f"message {msg_id.hex()[:12]}")
    if dep.get("/blocks/latest").encode() != dep.get("/blocks/latest").encode():
        problems.append("repeatable reads")
    return Check("interoperability", "explorer JSON round-trips to identical objects", not problems,
                 f"{chain.height + 1} blocks, {len(dep.gateway.accepted_txs)} txs" if not problems
                 else f"problems {problems[:5]}")


# data sharing and certification


def check_data_sharing(dep: "Deployment") -> Check:
    chain = dep.chain
    occurrences = Counter(tx.id for block in chain.blocks for tx in block.txs)
    missing = [t.hex()[:12] for t in dep.gateway.accepted_txs if occurrences[t] != 1]
    lost = [m.hex()[:12] for m in dep.gateway.accepted_messages if m not in dep.ingestor.tangle.messages]
    ok = not missing and not lost and len(set(dep.gateway.accepted_messages)) == len(dep.gateway.accepted_messages)
    return Check("secure data sharing", "every accepted write maps to exactly one committed record", ok,
                 f"{len(dep.gateway.accepted_txs)} txs, {len(dep.gateway.accepted_messages)} messages"
                 if ok else f"uncommitted txs {missing[:5]}, lost messages {lost[:5]}")


def tangle_problems(tangle: Tangle) -> list[str]:
    problems = []
    graph = {i: {p for p in m.parents if p in tangle.messages} for i, m in tangle.messages.items()}
    try:
        tuple(graphlib.TopologicalSorter(graph).static_order())
    except graphlib.CycleError:
        problems.append("cycle")
    referenced = {p for m in tangle.messages.values() for p in m.parents}
    if tangle.tips != set(tangle.messages) - referenced:
        problems.append("tips")
    previous: set[bytes] = set()
    for checkpoint_id, batch in tangle.batches:
        # full ancestor walk, no pruning
        seen, stack = set(), list(tangle.messages[checkpoint_id].parents)
        while stack:
            cur = stack.pop()
            if cur in seen or cur not in tangle.messages:
                continue
            seen.add(cur)
            stack.extend(tangle.messages[cur].parents)
        fresh = {i for i in seen - previous if tangle.messages[i].topic not in ("checkpoint", "genesis")}
        if digest_of(sorted(fresh)) != batch.batch_digest or len(fresh) != batch.count:
            problems.append(f"batch {batch.batch_digest.hex()[:12]}")
        previous |= seen | {checkpoint_id}
    return problems


def check_certification(dep: "Deployment") -> Check:
    tangle = dep.ingestor.tangle
    problems = tangle_problems(tangle)
    chain = dep.chain
    recorded = Counter(
        tx.args["batch_digest"]
        for block in chain.blocks
        for tx in block.txs
        if (tx.contract, tx.method) == ("traceability", "record_telemetry") and chain.receipts[tx.id].ok
    )
    for _, batch in tangle.batches:
        if recorded[batch.batch_digest.hex()] != 1:
            problems.append(f"batch {batch.batch_digest.hex()[:12]} recorded {recorded[batch.batch_digest.hex()]}x")
    if sum(recorded.values()) != len(tangle.batches):
        problems.append("unexpected batches on chain")
    return Check("data certification", "tangle acyclic, tips exact, batches recomputed and recorded once",
                 not problems and bool(tangle.batches),
                 f"{len(tangle.messages)} messages, {len(tangle.batches)} batches" if not problems
                 else f"problems {problems[:5]}")


# coverage


def coverage(dep: "Deployment", queried: set[tuple[str, str]]) -> tuple[Check, dict[str, Any]]:
    chain = dep.chain
    called = {(tx.contract, tx.method) for block in chain.blocks[1:] for tx in block.txs if chain.receipts[tx.id].ok}
    called |= queried
    called |= {("anchor_registry", "post")} if dep.stub.records() else set()
    expected = {
        (cid, m) for cid in ("permissioning", "identity", "host", "traceability", "anchor_registry")
        for m in NATIVE[cid][0]
    }
    missing_methods = sorted(f"{c}.{m}" for c, m in expected - called)
    reasons = {r.reason["kind"] for r in dep.stub.records()}
    kinds = {n.kind for n in dep.config.nodes}
    simple_synced = any(dep.node_chain(n.name).height > 0 for n in dep.config.nodes if n.kind == "simple")
    roles_used = {t.claims.role for t in dep.issued}
    missing_roles = sorted(set(dep.config.vocabulary) - roles_used)
    ok = not missing_methods and reasons == {INTERVAL, STAGE_COMPLETED} and kinds == {"validator", "simple"} \
        and simple_synced and not missing_roles
    summary = {
        "methods": sorted(f"{c}.{m}" for c, m in called & expected),
        "missing_methods": missing_methods,
        "anchor_reasons": sorted(reasons),
        "node_kinds": sorted(kinds),
        "roles": sorted(roles_used),
        "missing_roles": missing_roles,
    }
    detail = f"{len(summary['methods'])} methods, reasons {sorted(reasons)}, roles {len(roles_used)}"
    if not ok:
        detail = f"missing methods {missing_methods}, roles {missing_roles}, reasons {sorted(reasons)}"
    return Check("coverage", "all methods, both anchor triggers, both node kinds, all roles", ok, detail), summary
