"""Deterministic contract host.

Contracts are host-native handler tables registered by id. The host state
is one canonical dict::

    {"chain_id": str, "config_digest": hex,
     "templates": {name: {"acl": {method: [role, ...] | None}, "params": {...}}},
     "contracts": {id: {"template": name, "methods": {method: acl}}},
     "storage": {id: contract storage}}

``dispatch`` runs a transaction against it in place. Failed calls leave the
state untouched and still produce a receipt carrying the error kind.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

from .. import identity
from ..errors import (
    BadArguments,
    ConfigError,
    ContractError,
    DuplicateContract,
    NotDeployer,
    Unauthorized,
    UnknownContract,
    UnknownMethod,
)
from . import anchor_registry, permissioning, traceability
from .base import Context, Method, arg

SYSTEM_CONTRACTS = ("permissioning", "identity", "host")


def _deploy(ctx: Context, args: dict) -> None:
    cid = arg(args, "contract_id", str)
    template = arg(args, "template", str)
    if not permissioning.is_deployer(ctx.permissions, ctx.sender):
        raise NotDeployer(f"{ctx.sender} may not deploy contracts")
    if cid in ctx.state["contracts"]:
        raise DuplicateContract(cid)
    if template not in ctx.state["templates"] or template in SYSTEM_CONTRACTS:
        raise BadArguments(f"unknown deployable template {template!r}")
    install(ctx.state, cid, template)
    ctx.emit("contract_deployed", contract_id=cid, template=template)


HOST_METHODS = {"deploy": Method(_deploy)}

NATIVE: dict[str, tuple[dict[str, Method], Any]] = {
    "permissioning": (permissioning.METHODS, permissioning.init_storage),
    "identity": (identity.METHODS, identity.init_storage),
    "host": (HOST_METHODS, lambda params: {}),
    "traceability": (traceability.METHODS, traceability.init_storage),
    "anchor_registry": (anchor_registry.METHODS, anchor_registry.init_storage),
}


@dataclass
class Receipt:
    tx_id: str
    ok: bool
    error: str | None = None
    detail: str = ""
    events: list = field(default_factory=list)
    result: Any = None

    def to_dict(self) -> dict:
        return {
            "tx_id": self.tx_id,
            "ok": self.ok,
            "error": self.error,
            "detail": self.detail,
            "events": self.events,
            "result": self.result,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Receipt":
        return cls(**data)


def install(state: dict, cid: str, template: str) -> None:
    init = NATIVE[template][1]
    spec = state["templates"][template]
    state["contracts"][cid] = {"template": template, "methods": dict(spec["acl"])}
    state["storage"][cid] = init(spec.get("params", {}))


def genesis_state(args: dict) -> dict:
    """Build the initial host state from the genesis transaction arguments."""
    templates = args.get("templates", {})
    contracts = args.get("contracts", {})
    for name in SYSTEM_CONTRACTS:
        if contracts.get(name) != name:
            raise ConfigError(f"system contract {name!r} must be installed under its own id")
    vocabulary = templates.get("identity", {}).get("params", {}).get("vocabulary", list(identity.ROLES))
    for name, spec in templates.items():
        if name not in NATIVE:
            raise ConfigError(f"no native contract template {name!r}")
        expected = set(NATIVE[name][0])
        if set(spec.get("acl", {})) != expected:
            raise ConfigError(f"ACL for {name!r} must cover exactly {sorted(expected)}")
        for acl in spec["acl"].values():
            if acl is not None and not set(acl) <= set(vocabulary):
                raise ConfigError(f"ACL for {name!r} names roles outside the vocabulary")
    state = {
        "chain_id": arg(args, "chain_id", str),
        "config_digest": arg(args, "config_digest", str),
        "templates": json.loads(json.dumps(templates)),
        "contracts": {},
        "storage": {},
    }
    # permissioning and identity first: other contracts read them
    for cid in sorted(contracts, key=lambda c: (c not in SYSTEM_CONTRACTS, c)):
        template = contracts[cid]
        if template not in templates:
            raise ConfigError(f"contract {cid!r} uses unconfigured template {template!r}")
        install(state, cid, template)
    return state


def method_of(state: dict, contract: str, method: str) -> Method:
    if contract not in state["contracts"]:
        raise UnknownContract(contract)
    entry = state["contracts"][contract]
    if method not in entry["methods"]:
        raise UnknownMethod(f"{contract}.{method}")
    return NATIVE[entry["template"]][0][method]


def dispatch(state: dict, tx, height: int, timestamp: int) -> Receipt:
    """Execute ``tx`` against ``state`` in place and return its receipt."""
    tx_id = tx.id.hex()
    sender = tx.sender.hex()
    try:
        method = method_of(state, tx.contract, tx.method)
        roles = state["storage"]["identity"]["roles"]
        if not identity.authorize(roles, state["contracts"], sender, tx.contract, tx.method):
            raise Unauthorized(f"role {roles.get(sender)!r} may not call {tx.contract}.{tx.method}")
        if not isinstance(tx.args, dict):
            raise BadArguments("transaction args must be a map of named parameters")
        ctx = Context(state, tx.contract, sender, height, timestamp)
        result = _detached(method.handler(ctx, tx.args))
    except ContractError as exc:
        return Receipt(tx_id, False, exc.kind, str(exc))
    return Receipt(tx_id, True, events=ctx.events, result=result)


def query(state: dict, contract: str, method: str, args: dict | None = None) -> Any:
    """Run a read-only method outside any transaction (explorer reads)."""
    m = method_of(state, contract, method)
    if not m.read_only:
        raise UnknownMethod(f"{contract}.{method} is not a read method")
    return _detached(m.handler(Context(state, contract, "", -1, -1), args or {}))


def _detached(value: Any) -> Any:
    # results must not alias live storage
    return None if value is None else json.loads(json.dumps(value))
