"""Anchor registry hosted on the public-chain stub.

Records are kept in insertion order. Re-posting an identical record is a
no-op; posting a different digest for an already anchored (source, height)
is rejected as fork or tamper evidence.
"""

from __future__ import annotations

from ..encoding import canonical_encode
from ..errors import AnchorConflict, BadArguments
from .base import Context, Method, arg, digest_arg

REASON_KINDS = ("interval", "stage_completed")


def init_storage(params: dict) -> dict:
    return {"records": [], "index": {}}


def _key(source: str, height: int) -> str:
    return f"{source}|{height}"


def _reason(args: dict) -> dict:
    reason = arg(args, "reason", dict)
    kind = reason.get("kind")
    if kind == "interval" and set(reason) == {"kind"}:
        return {"kind": kind}
    if kind == "stage_completed" and set(reason) == {"kind", "lot_id", "stage"}:
        arg(reason, "lot_id", str)
        arg(reason, "stage", str)
        return dict(reason)
    raise BadArguments(f"reason must be interval or stage_completed, got {reason!r}")


def _post(ctx: Context, args: dict) -> dict:
    source = arg(args, "source_chain", str)
    height = arg(args, "height", int)
    digest = digest_arg(args, "digest")
    anchored_at = arg(args, "anchored_at", int)
    reason = _reason(args)
    if height < 0:
        raise BadArguments("height must be non-negative")
    store = ctx.storage
    key = _key(source, height)
    reason_key = canonical_encode(reason).decode()
    entry = store["index"].get(key)
    if entry is not None and entry["digest"] != digest:
        raise AnchorConflict(f"{key} already anchored with digest {entry['digest']}")
    if entry is not None and reason_key in entry["reasons"]:
        return {"status": "duplicate"}
    record = {
        "source_chain": source,
        "height": height,
        "digest": digest,
        "anchored_at": anchored_at,
        "reason": reason,
        "submitter": ctx.sender,
    }
    if entry is None:
        store["index"][key] = {"digest": digest, "reasons": [reason_key]}
    else:
        entry["reasons"].append(reason_key)
    store["records"].append(record)
    ctx.emit("anchored", source_chain=source, height=height, digest=digest)
    return {"status": "recorded"}


def _list_anchors(ctx: Context, args: dict) -> list:
    source = arg(args, "source_chain", str, optional=True)
    return [r for r in ctx.storage["records"] if source is None or r["source_chain"] == source]


def _get_anchor(ctx: Context, args: dict) -> dict | None:
    entry = ctx.storage["index"].get(_key(arg(args, "source_chain", str), arg(args, "height", int)))
    return None if entry is None else {"digest": entry["digest"]}


METHODS = {
    "post": Method(_post),
    "list_anchors": Method(_list_anchors, read_only=True),
    "get_anchor": Method(_get_anchor, read_only=True),
}
