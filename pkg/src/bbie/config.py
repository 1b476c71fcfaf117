"""Network configuration and genesis construction.

The JSON config names every principal (people, services) and node; keys are
derived deterministically from names unless a ``key_file`` is given, which
keeps simulator transcripts reproducible. The config digest is embedded in
genesis.

Config schema (version 1)::

    {
      "version": 1,
      "chain_id": "bbie-wine",
      "roles": [role, ...],                       # vocabulary
      "principals": {name: {"role": role, "admin": bool, "deployer": bool,
                            "key_file": path?}},
      "nodes": [{"name": str, "kind": "validator"|"simple", "enrolled": bool,
                 "operator": principal?}],
      "schedules": {schedule: [stage, ...]},
      "role_schedules": {role: schedule},
      "acl": {template: {method: [role, ...]}},  # optional, defaults below
      "anchor": {"interval": 86400, "event_triggers": ["stage_completed"],
                 "service": principal, "node": node, "stub_validator": principal,
                 "source_chain": str},
      "tangle": {"checkpoint_every": 16, "checkpoint_interval": 300,
                 "coordinator": principal, "node": node},
      "issuer": principal,
      "token_ttl": 3600,
      "key_domain": "bbie-sim",
      "sim": {"seed": 7, "latency_ms": [20, 200], "block_interval": 60}
    }
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .contracts import anchor_registry, permissioning, traceability
from .encoding import digest_of
from .errors import ConfigError
from .identity import ROLES
from .keys import KeyPair

PRODUCERS = ["wine_producer", "cork_producer"]
AUTHORITIES = ["health_authority", "quality_authority"]


def default_acl(vocabulary: list[str]) -> dict:
    everyone = list(vocabulary)
    return {
        # admin/deployer rights are enforced by the handlers themselves
        "permissioning": {m: everyone for m in permissioning.METHODS},
        "identity": {m: everyone for m in ("bind_address_role", "role_of")},
        "host": {"deploy": everyone},
        "traceability": {
            "register_lot": PRODUCERS,
            "record_stage": PRODUCERS,
            "link_component": PRODUCERS,
            "certify_stage": AUTHORITIES,
            "record_telemetry": ["baas_provider"],
            "get_trace": everyone,
            "list_lots": everyone,
        },
    }


@dataclass(frozen=True)
class Principal:
    name: str
    key: KeyPair
    role: str | None = None
    admin: bool = False
    deployer: bool = False


@dataclass(frozen=True)
class NodeSpec:
    name: str
    key: KeyPair
    kind: str
    enrolled: bool = True
    operator: str | None = None


@dataclass(frozen=True)
class AnchorPolicy:
    interval: int = 86_400
    event_triggers: frozenset = frozenset({"stage_completed"})

    def __post_init__(self) -> None:
        if self.interval <= 0:
            raise ConfigError("anchor interval must be positive")


@dataclass
class NetworkConfig:
    raw: dict
    chain_id: str
    vocabulary: list[str]
    principals: dict[str, Principal]
    nodes: list[NodeSpec]
    schedules: dict[str, list[str]]
    role_schedules: dict[str, str]
    acl: dict[str, dict]
    anchor_policy: AnchorPolicy
    anchor: dict
    tangle: dict
    issuer: str
    token_ttl: int
    sim: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str | os.PathLike | None = None) -> "NetworkConfig":
        try:
            return cls._parse(raw, Path(base_dir or "."))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed network config: {exc!r}") from exc

    @classmethod
    def load(cls, path: str | os.PathLike) -> "NetworkConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), path.parent)

    @classmethod
    def _parse(cls, raw: dict, base: Path) -> "NetworkConfig":
        if raw.get("version", 1) != 1:
            raise ConfigError(f"unsupported config version {raw.get('version')}")
        domain = raw.get("key_domain", "bbie-sim")

        def key_for(name: str, spec: dict) -> KeyPair:
            if spec.get("key_file"):
                return KeyPair.load(base / spec["key_file"])
            return KeyPair.from_name(name, domain)

        vocabulary = list(raw.get("roles", ROLES))
        principals = {}
        for name, spec in raw["principals"].items():
            role = spec.get("role")
            if role is not None and role not in vocabulary:
                raise ConfigError(f"principal {name!r} has unknown role {role!r}")
            principals[name] = Principal(
                name, key_for(name, spec), role, bool(spec.get("admin")), bool(spec.get("deployer"))
            )
        nodes = []
        for spec in raw["nodes"]:
            if spec["kind"] not in permissioning.NODE_KINDS:
                raise ConfigError(f"node {spec['name']!r} has unknown kind {spec['kind']!r}")
            nodes.append(
                NodeSpec(spec["name"], key_for(spec["name"], spec), spec["kind"],
                         bool(spec.get("enrolled", True)), spec.get("operator"))
            )
        names = [n.name for n in nodes]
        if len(set(names)) != len(names) or set(names) & set(principals):
            raise ConfigError("node and principal names must be unique")
        if not any(n.kind == permissioning.VALIDATOR and n.enrolled for n in nodes):
            raise ConfigError("at least one enrolled validator is required")
        if not any(p.admin for p in principals.values()):
            raise ConfigError("at least one admin principal is required")
        for p in principals.values():
            if p.admin and p.role is None:
                raise ConfigError(f"admin {p.name!r} needs a role to pass method ACLs")

        anchor = {
            "interval": 86_400,
            "event_triggers": ["stage_completed"],
            "source_chain": raw.get("chain_id", "bbie"),
            **raw.get("anchor", {}),
        }
        tangle = {"checkpoint_every": 16, "checkpoint_interval": 300, **raw.get("tangle", {})}
        acl = default_acl(vocabulary)
        for template, methods in raw.get("acl", {}).items():
            acl.setdefault(template, {}).update(methods)
        cfg = cls(
            raw=raw,
            chain_id=raw.get("chain_id", "bbie"),
            vocabulary=vocabulary,
            principals=principals,
            nodes=nodes,
            schedules=raw.get("schedules", {"wine": traceability.WINE_STAGES, "cork": traceability.CORK_STAGES}),
            role_schedules=raw.get("role_schedules", {"wine_producer": "wine", "cork_producer": "cork"}),
            acl=acl,
            anchor_policy=AnchorPolicy(int(anchor["interval"]), frozenset(anchor["event_triggers"])),
            anchor=anchor,
            tangle=tangle,
            issuer=raw.get("issuer", ""),
            token_ttl=int(raw.get("token_ttl", 3600)),
            sim=dict(raw.get("sim", {})),
        )
        for ref in (cfg.issuer, anchor.get("service"), anchor.get("stub_validator"), tangle.get("coordinator")):
            if ref and ref not in principals:
                raise ConfigError(f"config refers to unknown principal {ref!r}")
        for ref in (anchor.get("node"), tangle.get("node")):
            if ref and ref not in names:
                raise ConfigError(f"config refers to unknown node {ref!r}")
        return cfg

    # lookups

    def key(self, name: str) -> KeyPair:
        if name in self.principals:
            return self.principals[name].key
        for node in self.nodes:
            if node.name == name:
                return node.key
        raise ConfigError(f"unknown principal or node {name!r}")

    def role(self, name: str) -> str | None:
        p = self.principals.get(name)
        return p.role if p else None

    def node(self, name: str) -> NodeSpec:
        for node in self.nodes:
            if node.name == name:
                return node
        raise ConfigError(f"unknown node {name!r}")

    def name_of(self, address: bytes) -> str | None:
        for name, p in self.principals.items():
            if p.key.address == address:
                return name
        for node in self.nodes:
            if node.key.address == address:
                return node.name
        return None

    def digest(self) -> bytes:
        # simulator knobs are not part of the network identity
        return digest_of({k: v for k, v in self.raw.items() if k != "sim"})

    @property
    def coordinator(self) -> Principal | None:
        name = self.tangle.get("coordinator")
        return self.principals[name] if name else None

    # genesis

    def genesis_args(self) -> dict:
        coordinator = self.coordinator
        templates = {
            "permissioning": {
                "acl": self.acl["permissioning"],
                "params": {
                    "admins": sorted(p.key.address.hex() for p in self.principals.values() if p.admin),
                    "nodes": {n.key.address.hex(): n.kind for n in self.nodes if n.enrolled},
                    "deployers": sorted(p.key.address.hex() for p in self.principals.values() if p.deployer),
                    "open_deploy": False,
                },
            },
            "identity": {
                "acl": self.acl["identity"],
                "params": {
                    "roles": {p.key.address.hex(): p.role for p in self.principals.values() if p.role},
                    "vocabulary": self.vocabulary,
                },
            },
            "host": {"acl": self.acl["host"], "params": {}},
            "traceability": {
                "acl": self.acl["traceability"],
                "params": {
                    "schedules": self.schedules,
                    "role_schedules": self.role_schedules,
                    "coordinator": coordinator.key.address.hex() if coordinator else None,
                },
            },
        }
        return {
            "chain_id": self.chain_id,
            "config_digest": self.digest().hex(),
            "templates": templates,
            "contracts": {name: name for name in templates},
        }

    def stub_genesis_args(self) -> dict:
        validator = self.principals[self.anchor["stub_validator"]].key.address.hex()
        return stub_genesis_args(validator, self.vocabulary)


def stub_genesis_args(validator_hex: str, vocabulary: list[str] | None = None) -> dict:
    """Genesis of the public-chain stub: one validator, open anchor registry."""
    vocabulary = list(vocabulary or ROLES)
    templates: dict[str, Any] = {
        "permissioning": {
            "acl": {m: None for m in permissioning.METHODS},
            "params": {"admins": [validator_hex], "nodes": {validator_hex: "validator"}, "open_deploy": True},
        },
        "identity": {"acl": {"bind_address_role": None, "role_of": None}, "params": {"vocabulary": vocabulary}},
        "host": {"acl": {"deploy": None}, "params": {}},
        "anchor_registry": {"acl": {m: None for m in anchor_registry.METHODS}, "params": {}},
    }
    return {
        "chain_id": "public-stub",
        "config_digest": digest_of(templates).hex(),
        "templates": templates,
        "contracts": {name: name for name in templates},
    }
