"""Scenario files and the scenario runner.

Scenario schema (version 1)::

    {
      "version": 1,
      "meta": {"name": str, "seed": int, "duration": s,
               "resilience_runs": int, "fuzz_cases": int},
      "events": [
        {"t": s, "actor": principal, "action": "contract.method",
         "args": {...}, "expect": {"status": 202, "receipt": "ok" | ErrorKind}},
        {"t": s, "actor": principal, "action": "telemetry",
         "args": {"device": name, "topic": "a/b/c", "count": n, "every": s,
                  "field": "temp_mc", "base": int, "jitter": int, "unit": "mC"}}
      ]
    }

An action without a contract prefix targets ``traceability``. String
arguments may use placeholders: ``@addr:<name>`` (address of a principal or
node), ``@doc:<text>`` (SHA-256 of a document body) and ``@batch:latest``
(newest certified telemetry batch on the gateway node's chain; the argument
is dropped when there is none yet).

Every write goes through the gateway exactly as an external client would,
with a bearer token obtained from the issuer for the actor's current role.
"""

from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from . import checks
from .anchoring import STAGE_COMPLETED, verify_anchor
from .config import NetworkConfig
from .contracts.host import NATIVE
from .encoding import canonical_encode, sha256
from .errors import ConfigError, ScenarioValidation
from .keys import KeyPair
from .network import Deployment
from .sim import SimConfig

DEFAULT_CONTRACT = "traceability"
TELEMETRY = "telemetry"


@dataclass(frozen=True)
class ScenarioFile:
    name: str
    seed: int | None
    duration: int | None
    events: list[dict]
    resilience_runs: int = 10
    fuzz_cases: int = 300
    raw: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioFile":
        if raw.get("version", 1) != 1:
            raise ScenarioValidation(f"unsupported scenario version {raw.get('version')}")
        meta = raw.get("meta", {})
        events = raw.get("events", [])
        if not isinstance(events, list) or not all(isinstance(e, dict) for e in events):
            raise ScenarioValidation("events must be a list of objects")
        return cls(
            name=str(meta.get("name", "scenario")),
            seed=meta.get("seed"),
            duration=meta.get("duration"),
            events=events,
            resilience_runs=int(meta.get("resilience_runs", 10)),
            fuzz_cases=int(meta.get("fuzz_cases", 300)),
            raw=raw,
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ScenarioFile":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def validate(self, config: NetworkConfig, duration: int) -> None:
        contracts = {cid: cid for cid in ("permissioning", "identity", "host", "traceability")}
        last = 0
        for i, event in enumerate(self.events):
            where = f"event {i}"
            missing = {"t", "actor", "action"} - set(event)
            if missing:
                raise ScenarioValidation(f"{where} lacks {sorted(missing)}")
            t = event["t"]
            if not isinstance(t, int) or t < last or t > duration:
                raise ScenarioValidation(f"{where}: t must be a non-decreasing integer within the run")
            last = t
            if event["actor"] not in config.principals:
                raise ScenarioValidation(f"{where}: unknown actor {event['actor']!r}")
            action = event["action"]
            if action == TELEMETRY:
                args = event.get("args", {})
                if not {"device", "topic", "count", "every"} <= set(args):
                    raise ScenarioValidation(f"{where}: telemetry needs device, topic, count, every")
                if t + args["every"] * (args["count"] - 1) > duration:
                    raise ScenarioValidation(f"{where}: telemetry flood runs past the end")
                continue
            contract, _, method = action.rpartition(".")
            contract = contract or DEFAULT_CONTRACT
            template = contracts.get(contract)
            if template is None or method not in NATIVE[template][0]:
                raise ScenarioValidation(f"{where}: unknown action {action!r}")
            if (contract, method) == ("host", "deploy"):
                contracts[event["args"]["contract_id"]] = event["args"]["template"]


def bundled(name: str) -> Path:
    """Path of a data file shipped with the package."""
    return Path(str(resources.files("bbie") / "data" / name))


@dataclass
class ScenarioResult:
    report: dict
    deployment: Deployment

    @property
    def ok(self) -> bool:
        return self.report["ok"]

    def to_json(self) -> bytes:
        return canonical_encode(self.report)

    def to_text(self) -> str:
        return render_text(self.report)


class _Runner:
    def __init__(self, dep: Deployment, scenario: ScenarioFile):
        self.dep = dep
        self.scenario = scenario
        self.log: list[dict] = []
        self.noise = random.Random(f"telemetry/{dep.sim_config.seed}")

    def schedule(self) -> None:
        for event in self.scenario.events:
            if event["action"] == TELEMETRY:
                self._schedule_flood(event)
            else:
                self.dep.sim.at(event["t"] * 1000, lambda e=event: self._call(e))

    def _resolve(self, value: Any) -> Any:
        if isinstance(value, dict):
            out = {k: self._resolve(v) for k, v in value.items()}
            return {k: v for k, v in out.items() if v is not _DROP}
        if isinstance(value, list):
            return [self._resolve(v) for v in value]
        if isinstance(value, str) and value.startswith("@"):
            kind, _, ref = value[1:].partition(":")
            if kind == "addr":
                return self.dep.config.key(ref).address.hex()
            if kind == "doc":
                return sha256(ref.encode()).hex()
            if kind == "batch" and ref == "latest":
                telemetry = self.dep.chain.state["storage"][DEFAULT_CONTRACT]["telemetry"]
                if not telemetry:
                    return _DROP
                return max(telemetry, key=lambda d: telemetry[d]["seq"])
            raise ScenarioValidation(f"unknown placeholder {value!r}")
        return value

    def _call(self, event: dict) -> None:
        contract, _, method = event["action"].rpartition(".")
        contract = contract or DEFAULT_CONTRACT
        tx, resp = self.dep.call(event["actor"], contract, method, self._resolve(event.get("args", {})))
        self.log.append({
            "t": event["t"], "actor": event["actor"], "action": f"{contract}.{method}",
            "status": resp.status, "tx": tx.id.hex() if resp.status == 202 else None,
            "error": None if resp.ok else resp.body.get("error"), "expect": event.get("expect", {}),
        })

    def _schedule_flood(self, event: dict) -> None:
        args = event["args"]
        device = KeyPair.from_name(f"device/{args['device']}", self.dep.config.raw.get("key_domain", "bbie-sim"))
        for i in range(args["count"]):
            t = event["t"] + i * args["every"]
            self.dep.sim.at(t * 1000, lambda t=t: self._reading(event, device, t))

    def _reading(self, event: dict, device: KeyPair, t: int) -> None:
        args = event["args"]
        value = args.get("base", 0) + self.noise.randint(-args.get("jitter", 0), args.get("jitter", 0))
        payload = {args.get("field", "value"): value, "unit": args.get("unit", "")}
        resp = self.dep.ingest(event["actor"], device, args["topic"], payload)
        self.log.append({
            "t": t, "actor": event["actor"], "action": TELEMETRY, "status": resp.status, "tx": None,
            "error": None if resp.ok else resp.body.get("error"), "expect": event.get("expect", {}),
        })


_DROP = object()


def run_scenario(config: NetworkConfig, scenario: ScenarioFile, *, seed: int | None = None) -> ScenarioResult:
    """Drive a full deployment through ``scenario`` and evaluate every requirement check."""
    overrides: dict[str, Any] = {}
    if seed is not None or scenario.seed is not None:
        overrides["seed"] = seed if seed is not None else scenario.seed
    if scenario.duration is not None:
        overrides["duration"] = scenario.duration
    try:
        sim_config = SimConfig.from_network(config, **overrides)
    except ConfigError as exc:
        raise ScenarioValidation(str(exc)) from exc
    scenario.validate(config, sim_config.duration)
    dep = Deployment(config, sim_config)
    runner = _Runner(dep, scenario)
    runner.schedule()
    dep.run()
    return ScenarioResult(build_report(dep, scenario, runner.log), dep)


def build_report(dep: Deployment, scenario: ScenarioFile, log: list[dict]) -> dict:
    chain = dep.chain
    rng = random.Random(f"checks/{dep.sim_config.seed}")
    queried = set()
    lots = chain.query("traceability", "list_lots")
    queried.add(("traceability", "list_lots"))
    traces = {lot: chain.query("traceability", "get_trace", {"lot_id": lot}) for lot in lots}
    queried.add(("traceability", "get_trace"))
    chain.query("permissioning", "get_permissions")
    queried.add(("permissioning", "get_permissions"))
    chain.query("identity", "role_of", {"addr": dep.config.key("winery").address.hex()})
    queried.add(("identity", "role_of"))
    records = dep.stub.records()
    queried.add(("anchor_registry", "list_anchors"))
    if records:
        dep.stub.get(records[0].source_chain, records[0].height)
        queried.add(("anchor_registry", "get_anchor"))

    results = [checks.check_traces(chain), checks.check_expectations(log, chain)]
    results += checks.check_privacy(dep)
    results += checks.check_resilience(dep, scenario.resilience_runs, dep.sim_config.seed)
    results.append(checks.check_identity(dep, rng, scenario.fuzz_cases))
    results += checks.check_integrity(dep)
    results.append(checks.check_confidentiality(dep))
    results.append(checks.check_interop(dep))
    results.append(checks.check_data_sharing(dep))
    results.append(checks.check_certification(dep))
    cover, cover_summary = checks.coverage(dep, queried)
    results.append(cover)

    verdict = verify_anchor(dep.stub, dep.node_chain(dep.anchor_node))
    anchors = [r.to_args() for r in records]
    tangle = dep.ingestor.tangle if dep.ingestor else None
    refused: dict[str, int] = {}
    for entry in log:
        if entry["status"] != 202:
            refused[str(entry["status"])] = refused.get(str(entry["status"]), 0) + 1
    return {
        "scenario": scenario.name,
        "seed": dep.sim_config.seed,
        "duration": dep.sim_config.duration,
        "config_digest": dep.config.digest().hex(),
        "transcript_digest": dep.sim.transcript.digest().hex(),
        "nodes": {
            name: {"kind": dep.config.node(name).kind, "height": node.chain.height,
                   "head": node.chain.head_digest.hex()}
            for name, node in dep.sim.nodes.items()
        },
        "lots": {
            lot: {
                "product": t["product"], "complete": t["complete"], "blocked": t["blocked"],
                "stages": [s["name"] for s in t["stages"]],
                "verdicts": {s["name"]: [c["verdict"] for c in s["certifications"]] for s in t["stages"]},
                "components": [c["lot_id"] for c in t["components"]],
            }
            for lot, t in traces.items()
        },
        "anchors": anchors,
        "anchor_counts": {
            "interval": sum(1 for a in anchors if a["reason"]["kind"] == "interval"),
            STAGE_COMPLETED: sum(1 for a in anchors if a["reason"]["kind"] == STAGE_COMPLETED),
        },
        "verify_anchor": type(verdict).__name__,
        "writes": {
            "accepted_txs": len(dep.gateway.accepted_txs),
            "accepted_messages": len(dep.gateway.accepted_messages),
            "refused": refused,
        },
        "tangle": {
            "messages": len(tangle.messages) if tangle else 0,
            "checkpoints": len(tangle.checkpoints) if tangle else 0,
            "unconfirmed": len(tangle.unconfirmed()) if tangle else 0,
        },
        "coverage": cover_summary,
        "checks": [c.to_dict() for c in results],
        "ok": all(c.ok for c in results),
    }


def render_text(report: dict) -> str:
    lines = [
        f"scenario {report['scenario']}  seed={report['seed']}  duration={report['duration']}s",
        f"config   {report['config_digest']}",
        f"transcript {report['transcript_digest']}",
        "",
        "nodes:",
    ]
    for name, node in report["nodes"].items():
        lines.append(f"  {name:<4} {node['kind']:<9} height {node['height']:>4}  head {node['head'][:16]}")
    lines.append("")
    lines.append("lots:")
    for lot, info in report["lots"].items():
        state = "blocked at " + ",".join(info["blocked"]) if info["blocked"] else (
            "complete" if info["complete"] else "in progress")
        lines.append(f"  {lot}: {state}; stages {' > '.join(info['stages'])}")
        if info["components"]:
            lines.append(f"    components: {', '.join(info['components'])}")
    counts = report["anchor_counts"]
    lines += [
        "",
        f"anchors: {counts['interval']} interval, {counts[STAGE_COMPLETED]} stage_completed; "
        f"verify_anchor: {report['verify_anchor']}",
        f"writes: {report['writes']['accepted_txs']} txs, {report['writes']['accepted_messages']} telemetry "
        f"messages accepted; refused {report['writes']['refused']}",
        f"tangle: {report['tangle']['messages']} messages, {report['tangle']['checkpoints']} checkpoints",
        "",
        "checks:",
    ]
    for c in report["checks"]:
        lines.append(f"  [{'PASS' if c['ok'] else 'FAIL'}] {c['requirement']}: {c['check']} ({c['detail']})")
    lines.append("")
    lines.append("RESULT: " + ("all checks passed" if report["ok"] else "FAILED"))
    return "\n".join(lines) + "\n"
