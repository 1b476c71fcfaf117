"""Ledger-wide permissioning contract: admins, node enrollment, deployers.

Storage is a plain canonical dict::

    {"admins": [addr, ...], "nodes": {addr: "simple"|"validator"},
     "deployers": [addr, ...], "open_deploy": bool}

Address lists are kept sorted so the state digest does not depend on call
order. There is no removal operation, so the admin set can only grow.
"""

from __future__ import annotations

from bisect import insort

from ..encoding import is_hex
from ..errors import (
    AlreadyAdmin,
    AlreadyEnrolled,
    AlreadyValidator,
    BadArguments,
    ConfigError,
    NotAdmin,
    UnknownNode,
)
from .base import Context, Method, address_arg, arg

SIMPLE = "simple"
VALIDATOR = "validator"
NODE_KINDS = (SIMPLE, VALIDATOR)


def init_storage(params: dict) -> dict:
    admins = sorted(set(params.get("admins", [])))
    if not admins:
        raise ConfigError("permissioning needs at least one genesis admin")
    nodes = dict(params.get("nodes", {}))
    for addr in [*admins, *nodes, *params.get("deployers", [])]:
        if not is_hex(addr, 20):
            raise ConfigError(f"bad address in permissioning params: {addr!r}")
    if any(kind not in NODE_KINDS for kind in nodes.values()):
        raise ConfigError("unknown node kind in permissioning params")
    return {
        "admins": admins,
        "nodes": {k: nodes[k] for k in sorted(nodes)},
        "deployers": sorted(set(params.get("deployers", []))),
        "open_deploy": bool(params.get("open_deploy", False)),
    }


def validators(perm: dict) -> list[str]:
    return sorted(a for a, kind in perm["nodes"].items() if kind == VALIDATOR)


def is_admin(perm: dict, addr: str) -> bool:
    return addr in perm["admins"]


def is_deployer(perm: dict, addr: str) -> bool:
    return perm["open_deploy"] or addr in perm["deployers"]


def _require_admin(perm: dict, caller: str) -> None:
    if caller not in perm["admins"]:
        raise NotAdmin(f"{caller} is not an administrator")


def add_admin(perm: dict, caller: str, new_admin: str) -> dict:
    _require_admin(perm, caller)
    if new_admin in perm["admins"]:
        raise AlreadyAdmin(new_admin)
    insort(perm["admins"], new_admin)
    return perm


def enroll_node(perm: dict, caller: str, node: str, kind: str) -> dict:
    _require_admin(perm, caller)
    if kind not in NODE_KINDS:
        raise BadArguments(f"unknown node kind {kind!r}")
    if node in perm["nodes"]:
        raise AlreadyEnrolled(node)
    perm["nodes"][node] = kind
    return perm


def promote_validator(perm: dict, caller: str, node: str) -> dict:
    _require_admin(perm, caller)
    if node not in perm["nodes"]:
        raise UnknownNode(node)
    if perm["nodes"][node] == VALIDATOR:
        raise AlreadyValidator(node)
    perm["nodes"][node] = VALIDATOR
    return perm


def set_deployer(perm: dict, caller: str, addr: str, allowed: bool) -> dict:
    _require_admin(perm, caller)
    if allowed and addr not in perm["deployers"]:
        insort(perm["deployers"], addr)
    elif not allowed and addr in perm["deployers"]:
        perm["deployers"].remove(addr)
    return perm


def _add_admin(ctx: Context, args: dict) -> None:
    new_admin = address_arg(args, "new_admin")
    add_admin(ctx.storage, ctx.sender, new_admin)
    ctx.emit("admin_added", address=new_admin)


def _enroll_node(ctx: Context, args: dict) -> None:
    node = address_arg(args, "node")
    kind = arg(args, "kind", str)
    enroll_node(ctx.storage, ctx.sender, node, kind)
    ctx.emit("node_enrolled", address=node, node_kind=kind)


def _promote_validator(ctx: Context, args: dict) -> None:
    node = address_arg(args, "node")
    promote_validator(ctx.storage, ctx.sender, node)
    ctx.emit("validator_promoted", address=node)


def _set_deployer(ctx: Context, args: dict) -> None:
    addr = address_arg(args, "addr")
    allowed = arg(args, "allowed", bool)
    set_deployer(ctx.storage, ctx.sender, addr, allowed)
    ctx.emit("deployer_set", address=addr, allowed=allowed)


def _get_permissions(ctx: Context, args: dict) -> dict:
    return ctx.storage


METHODS = {
    "add_admin": Method(_add_admin),
    "enroll_node": Method(_enroll_node),
    "promote_validator": Method(_promote_validator),
    "set_deployer": Method(_set_deployer),
    "get_permissions": Method(_get_permissions, read_only=True),
}
