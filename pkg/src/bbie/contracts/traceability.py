"""Supply-chain traceability contract.

Lots follow a fixed stage schedule chosen by the registering producer's
role. Authorities certify recorded stages; a Rejected verdict blocks the
lot until an Approved verdict on the same stage. Finished lots can be
linked as components of other lots (cork stoppers into a wine lot), and
certified telemetry batches from the DAG ledger are recorded so stages can
cite them by digest.
"""

from __future__ import annotations

from ..errors import (
    AlreadyLinked,
    BadArguments,
    ComponentIncomplete,
    ConfigError,
    CycleDetected,
    DuplicateBatch,
    DuplicateLot,
    LotBlocked,
    OutOfOrderStage,
    Unauthorized,
    UnknownLot,
    UnknownStage,
)
from .base import Context, Method, arg, digest_arg

APPROVED = "Approved"
REJECTED = "Rejected"
VERDICTS = (APPROVED, REJECTED)

WINE_STAGES = ["cultivating", "harvesting", "fermenting", "aging", "bottling"]
CORK_STAGES = ["harvesting_bark", "processing", "quality_control", "finishing"]


def init_storage(params: dict) -> dict:
    schedules = params.get("schedules", {"wine": WINE_STAGES, "cork": CORK_STAGES})
    role_schedules = params.get("role_schedules", {"wine_producer": "wine", "cork_producer": "cork"})
    for role, name in role_schedules.items():
        if name not in schedules:
            raise ConfigError(f"role {role!r} maps to unknown schedule {name!r}")
    return {
        "lots": {},
        "telemetry": {},
        "schedules": {k: list(v) for k, v in schedules.items()},
        "role_schedules": dict(role_schedules),
        "coordinator": params.get("coordinator"),
    }


def _lot(storage: dict, lot_id: str) -> dict:
    try:
        return storage["lots"][lot_id]
    except KeyError:
        raise UnknownLot(lot_id) from None


def is_complete(storage: dict, lot: dict) -> bool:
    return len(lot["stages"]) == len(storage["schedules"][lot["schedule"]])


def _reaches(storage: dict, start: str, target: str) -> bool:
    """True if ``target`` is ``start`` or among its transitive components."""
    stack, seen = [start], set()
    while stack:
        cur = stack.pop()
        if cur == target:
            return True
        if cur in seen:
            continue
        seen.add(cur)
        stack.extend(storage["lots"][cur]["components"])
    return False


def _documents(args: dict) -> list[dict]:
    docs = arg(args, "documents", list, optional=True) or []
    out = []
    for doc in docs:
        if not isinstance(doc, dict) or set(doc) != {"digest", "uri"}:
            raise BadArguments("each document needs exactly 'digest' and 'uri'")
        digest_arg(doc, "digest")
        arg(doc, "uri", str)
        out.append({"digest": doc["digest"], "uri": doc["uri"]})
    return out


def _register_lot(ctx: Context, args: dict) -> None:
    lot_id = arg(args, "lot_id", str)
    product = arg(args, "product", str)
    if not lot_id:
        raise BadArguments("lot_id must be non-empty")
    store = ctx.storage
    schedule = store["role_schedules"].get(ctx.role)
    if schedule is None:
        raise Unauthorized(f"role {ctx.role!r} cannot register lots")
    if lot_id in store["lots"]:
        raise DuplicateLot(lot_id)
    store["lots"][lot_id] = {
        "product": product,
        "owner_role": ctx.role,
        "registrant": ctx.sender,
        "schedule": schedule,
        "registered_at": ctx.timestamp,
        "stages": [],
        "components": [],
        "blocked": [],
    }
    ctx.emit("lot_registered", lot_id=lot_id, product=product)


def _record_stage(ctx: Context, args: dict) -> None:
    lot_id = arg(args, "lot_id", str)
    stage = arg(args, "stage", str)
    batch = digest_arg(args, "batch_digest", optional=True)
    docs = _documents(args)
    store = ctx.storage
    lot = _lot(store, lot_id)
    if ctx.role != lot["owner_role"]:
        raise Unauthorized(f"only {lot['owner_role']} may record stages of {lot_id}")
    if lot["blocked"]:
        raise LotBlocked(f"{lot_id} has rejected stages {lot['blocked']}")
    schedule = store["schedules"][lot["schedule"]]
    done = len(lot["stages"])
    expected = schedule[done] if done < len(schedule) else None
    if stage != expected:
        raise OutOfOrderStage(f"{lot_id}: expected {expected!r}, got {stage!r}")
    lot["stages"].append(
        {
            "name": stage,
            "actor": ctx.sender,
            "ts": ctx.timestamp,
            "height": ctx.height,
            "batch_digest": batch,
            "documents": docs,
            "certifications": [],
        }
    )
    ctx.emit("stage_completed", lot_id=lot_id, stage=stage)


def _certify_stage(ctx: Context, args: dict) -> None:
    lot_id = arg(args, "lot_id", str)
    stage = arg(args, "stage", str)
    verdict = arg(args, "verdict", str)
    if verdict not in VERDICTS:
        raise BadArguments(f"verdict must be one of {VERDICTS}")
    lot = _lot(ctx.storage, lot_id)
    record = next((s for s in lot["stages"] if s["name"] == stage), None)
    if record is None:
        raise UnknownStage(f"{lot_id} has no recorded stage {stage!r}")
    record["certifications"].append(
        {"authority": ctx.sender, "role": ctx.role, "verdict": verdict, "ts": ctx.timestamp}
    )
    if verdict == REJECTED and stage not in lot["blocked"]:
        lot["blocked"].append(stage)
    elif verdict == APPROVED and stage in lot["blocked"]:
        lot["blocked"].remove(stage)
    ctx.emit("stage_certified", lot_id=lot_id, stage=stage, verdict=verdict)


def _link_component(ctx: Context, args: dict) -> None:
    target_id = arg(args, "lot_id", str)
    component_id = arg(args, "component", str)
    store = ctx.storage
    target = _lot(store, target_id)
    component = _lot(store, component_id)
    if ctx.role != target["owner_role"]:
        raise Unauthorized(f"only {target['owner_role']} may link components into {target_id}")
    if _reaches(store, component_id, target_id):
        raise CycleDetected(f"linking {component_id} into {target_id} would create a cycle")
    if component_id in target["components"]:
        raise AlreadyLinked(f"{component_id} already linked into {target_id}")
    if not is_complete(store, component):
        raise ComponentIncomplete(f"{component_id} has not completed its final stage")
    target["components"].append(component_id)
    ctx.emit("component_linked", lot_id=target_id, component=component_id)


def _record_telemetry(ctx: Context, args: dict) -> None:
    digest = digest_arg(args, "batch_digest")
    count = arg(args, "count", int)
    t_min = arg(args, "t_min", int)
    t_max = arg(args, "t_max", int)
    topics = arg(args, "topics", list)
    if count < 1 or t_min > t_max:
        raise BadArguments("batch needs count >= 1 and t_min <= t_max")
    if not topics or not all(isinstance(t, str) for t in topics) or topics != sorted(set(topics)):
        raise BadArguments("topics must be a non-empty sorted list of distinct strings")
    store = ctx.storage
    coordinator = store["coordinator"]
    if coordinator is not None and ctx.sender != coordinator:
        raise Unauthorized("only the ingest coordinator may record telemetry")
    if digest in store["telemetry"]:
        raise DuplicateBatch(digest)
    store["telemetry"][digest] = {
        "count": count,
        "t_min": t_min,
        "t_max": t_max,
        "topics": list(topics),
        "seq": len(store["telemetry"]),
        "height": ctx.height,
    }
    ctx.emit("telemetry_recorded", batch_digest=digest, count=count)


def trace_view(storage: dict, lot_id: str) -> dict:
    """Nested, read-only history of a lot and (recursively) its components."""
    lot = _lot(storage, lot_id)
    stages = []
    for s in lot["stages"]:
        view = dict(s)
        batch = storage["telemetry"].get(s["batch_digest"]) if s["batch_digest"] else None
        view["batch"] = None if batch is None else {"batch_digest": s["batch_digest"], **batch}
        stages.append(view)
    return {
        "lot_id": lot_id,
        "product": lot["product"],
        "owner_role": lot["owner_role"],
        "schedule": list(storage["schedules"][lot["schedule"]]),
        "complete": is_complete(storage, lot),
        "blocked": list(lot["blocked"]),
        "stages": stages,
        "components": [trace_view(storage, c) for c in lot["components"]],
    }


def _get_trace(ctx: Context, args: dict) -> dict:
    return trace_view(ctx.storage, arg(args, "lot_id", str))


def _list_lots(ctx: Context, args: dict) -> list:
    return sorted(ctx.storage["lots"])


METHODS = {
    "register_lot": Method(_register_lot),
    "record_stage": Method(_record_stage),
    "certify_stage": Method(_certify_stage),
    "link_component": Method(_link_component),
    "record_telemetry": Method(_record_telemetry),
    "get_trace": Method(_get_trace, read_only=True),
    "list_lots": Method(_list_lots, read_only=True),
}
