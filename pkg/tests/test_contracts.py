import copy

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bbie.checks import fold_traces
from bbie.config import default_acl
from bbie.contracts import host
from bbie.contracts.host import NATIVE
from bbie.contracts.traceability import WINE_STAGES
from bbie.errors import UnknownLot
from bbie.identity import ROLES
from bbie.keys import KeyPair
from bbie.ledger import Transaction, make_genesis

from conftest import Ledger, small_config

CORK = ["harvesting_bark", "processing", "quality_control", "finishing"]


def wine_lot(ledger, lot="wine-2024-001", stages=WINE_STAGES):
    assert ledger.call("winery", "traceability", "register_lot", {"lot_id": lot, "product": "Cannonau"}).ok
    for stage in stages:
        r = ledger.call("winery", "traceability", "record_stage", {"lot_id": lot, "stage": stage})
        assert r.ok, r


def cork_lot(ledger, lot="cork-1", stages=CORK):
    assert ledger.call("corks", "traceability", "register_lot", {"lot_id": lot, "product": "stoppers"}).ok
    for stage in stages:
        assert ledger.call("corks", "traceability", "record_stage", {"lot_id": lot, "stage": stage}).ok


def trace(ledger, lot):
    return ledger.chain.query("traceability", "get_trace", {"lot_id": lot})


def test_dispatch_errors(ledger):
    state = copy.deepcopy(ledger.chain.state)
    key = ledger.config.key("consumer")
    tx = Transaction.create(key, "traceability", "record_stage", {"lot_id": "x", "stage": "aging"}, 0)
    receipt = host.dispatch(state, tx, 1, 60)
    assert receipt.error == "Unauthorized" and state == ledger.chain.state
    tx = Transaction.create(key, "nope", "m", {}, 1)
    assert host.dispatch(state, tx, 1, 60).error == "UnknownContract"
    tx = Transaction.create(key, "traceability", "nope", {}, 2)
    assert host.dispatch(state, tx, 1, 60).error == "UnknownMethod"


def test_register_lot(ledger):
    assert ledger.call("winery", "traceability", "register_lot", {"lot_id": "wine-2024-001", "product": "Cannonau"}).ok
    assert ledger.chain.query("traceability", "list_lots") == ["wine-2024-001"]
    assert ledger.call("winery", "traceability", "register_lot",
                       {"lot_id": "wine-2024-001", "product": "x"}).error == "DuplicateLot"
    assert ledger.call("asl", "traceability", "register_lot",
                       {"lot_id": "y", "product": "x"}).error == "Unauthorized"


def test_stage_order(ledger):
    wine_lot(ledger, stages=WINE_STAGES[:2])
    r = ledger.call("winery", "traceability", "record_stage", {"lot_id": "wine-2024-001", "stage": "bottling"})
    assert r.error == "OutOfOrderStage"
    for stage in WINE_STAGES[2:]:
        assert ledger.call("winery", "traceability", "record_stage", {"lot_id": "wine-2024-001", "stage": stage}).ok
    t = trace(ledger, "wine-2024-001")
    assert [s["name"] for s in t["stages"]] == WINE_STAGES and t["complete"]
    r = ledger.call("winery", "traceability", "record_stage", {"lot_id": "wine-2024-001", "stage": "bottling"})
    assert r.error == "OutOfOrderStage"


def test_other_producer_cannot_record(ledger):
    wine_lot(ledger, stages=[])
    r = ledger.call("corks", "traceability", "record_stage", {"lot_id": "wine-2024-001", "stage": "cultivating"})
    assert r.error == "Unauthorized"


def test_certification_and_blocking(ledger):
    wine_lot(ledger, stages=WINE_STAGES[:3])
    r = ledger.call("asl", "traceability", "certify_stage",
                    {"lot_id": "wine-2024-001", "stage": "fermenting", "verdict": "Approved"})
    assert r.ok
    assert trace(ledger, "wine-2024-001")["stages"][2]["certifications"][0]["verdict"] == "Approved"
    assert ledger.call("corks", "traceability", "certify_stage",
                       {"lot_id": "wine-2024-001", "stage": "fermenting", "verdict": "Approved"}).error == "Unauthorized"
    assert ledger.call("asl", "traceability", "certify_stage",
                       {"lot_id": "wine-2024-001", "stage": "aging", "verdict": "Approved"}).error == "UnknownStage"
    assert ledger.call("laore", "traceability", "certify_stage",
                       {"lot_id": "wine-2024-001", "stage": "harvesting", "verdict": "Rejected"}).ok
    assert trace(ledger, "wine-2024-001")["blocked"] == ["harvesting"]
    r = ledger.call("winery", "traceability", "record_stage", {"lot_id": "wine-2024-001", "stage": "aging"})
    assert r.error == "LotBlocked"
    # a later approval on the same stage lifts the block
    assert ledger.call("laore", "traceability", "certify_stage",
                       {"lot_id": "wine-2024-001", "stage": "harvesting", "verdict": "Approved"}).ok
    assert ledger.call("winery", "traceability", "record_stage", {"lot_id": "wine-2024-001", "stage": "aging"}).ok


def test_link_component(ledger):
    wine_lot(ledger, stages=WINE_STAGES[:4])
    cork_lot(ledger, "cork-partial", CORK[:3])
    r = ledger.call("winery", "traceability", "link_component", {"lot_id": "wine-2024-001", "component": "cork-partial"})
    assert r.error == "ComponentIncomplete"
    cork_lot(ledger)
    assert ledger.call("winery", "traceability", "link_component",
                       {"lot_id": "wine-2024-001", "component": "cork-1"}).ok
    assert ledger.call("winery", "traceability", "link_component",
                       {"lot_id": "wine-2024-001", "component": "cork-1"}).error == "AlreadyLinked"
    r = ledger.call("corks", "traceability", "link_component", {"lot_id": "cork-1", "component": "wine-2024-001"})
    assert r.error == "CycleDetected"
    t = trace(ledger, "wine-2024-001")
    assert t["components"][0]["lot_id"] == "cork-1"
    assert [s["name"] for s in t["components"][0]["stages"]] == CORK
    with pytest.raises(UnknownLot):
        trace(ledger, "missing")


def test_documents_are_digests_only(ledger):
    wine_lot(ledger, stages=[])
    doc = {"digest": "ab" * 32, "uri": "ipfs://doc"}
    assert ledger.call("winery", "traceability", "record_stage",
                       {"lot_id": "wine-2024-001", "stage": "cultivating", "documents": [doc]}).ok
    assert trace(ledger, "wine-2024-001")["stages"][0]["documents"] == [doc]
    r = ledger.call("winery", "traceability", "record_stage",
                    {"lot_id": "wine-2024-001", "stage": "harvesting", "documents": [{"body": "secret"}]})
    assert r.error == "BadArguments"


def test_record_telemetry(ledger):
    batch = {"batch_digest": "cd" * 32, "count": 5, "t_min": 1, "t_max": 9, "topics": ["greenhouse/t"]}
    assert ledger.call("coord", "traceability", "record_telemetry", batch).ok
    assert ledger.call("coord", "traceability", "record_telemetry", batch).error == "DuplicateBatch"
    assert ledger.call("winery", "traceability", "record_telemetry",
                       {**batch, "batch_digest": "ef" * 32}).error == "Unauthorized"
    # same role, but not the configured coordinator
    assert ledger.call("admin", "traceability", "record_telemetry",
                       {**batch, "batch_digest": "ef" * 32}).error == "Unauthorized"


def test_deploy(ledger):
    assert ledger.call("admin", "host", "deploy", {"contract_id": "archive", "template": "traceability"}).ok
    assert ledger.call("admin", "host", "deploy", {"contract_id": "archive",
                                                    "template": "traceability"}).error == "DuplicateContract"
    assert ledger.call("winery", "host", "deploy", {"contract_id": "x", "template": "traceability"}).error == "NotDeployer"
    assert ledger.call("admin", "host", "deploy", {"contract_id": "y", "template": "permissioning"}).error == "BadArguments"
    assert ledger.call("winery", "archive", "register_lot", {"lot_id": "a", "product": "p"}).ok
    assert ledger.chain.query("archive", "list_lots") == ["a"]
    assert ledger.chain.query("traceability", "list_lots") == []


def test_acl_matrix_exhaustive():
    """Outcome of dispatch for every (role, traceability method) pair vs the documented table."""
    cfg = small_config()
    state = make_genesis(cfg.genesis_args()).state
    documented = default_acl(list(ROLES))["traceability"]
    for role in ROLES:
        key = KeyPair.from_name(f"acl/{role}")
        state["storage"]["identity"]["roles"][key.address.hex()] = role
        for method in NATIVE["traceability"][0]:
            tx = Transaction(key.address, key.public, 0, "traceability", method, {})
            receipt = host.dispatch(copy.deepcopy(state), tx, 1, 0)
            # the ACL gate fires before argument checks
            denied = receipt.error == "Unauthorized" and "may not call" in receipt.detail
            assert denied == (role not in documented[method]), (role, method, receipt)


def test_trace_equals_replay(ledger):
    wine_lot(ledger, stages=WINE_STAGES[:4])
    cork_lot(ledger)
    ledger.call("asl", "traceability", "certify_stage", {"lot_id": "cork-1", "stage": "processing", "verdict": "Rejected"})
    ledger.call("winery", "traceability", "link_component", {"lot_id": "wine-2024-001", "component": "cork-1"})
    ledger.call("coord", "traceability", "record_telemetry",
                {"batch_digest": "11" * 32, "count": 2, "t_min": 0, "t_max": 1, "topics": ["a"]})
    ledger.call("winery", "traceability", "record_stage",
                {"lot_id": "wine-2024-001", "stage": "bottling", "batch_digest": "11" * 32})
    oracle = fold_traces(ledger.chain)
    for lot in ledger.chain.query("traceability", "list_lots"):
        assert trace(ledger, lot) == oracle[lot]


ACTIONS = st.lists(
    st.tuples(
        st.sampled_from(["winery", "corks", "asl", "laore", "consumer"]),
        st.sampled_from(["register", "stage", "certify", "link"]),
        st.integers(0, 2),
        st.integers(0, 4),
        st.booleans(),
    ),
    max_size=25,
)


@settings(max_examples=20, deadline=None)
@given(ACTIONS)
def test_append_only_and_replay_property(actions):
    led = Ledger(small_config())
    history = []
    for actor, kind, lot_i, stage_i, approve in actions:
        lot = f"lot{lot_i}"
        if kind == "register":
            args = {"lot_id": lot, "product": "p"}
            method = "register_lot"
        elif kind == "stage":
            args = {"lot_id": lot, "stage": (WINE_STAGES + CORK)[stage_i]}
            method = "record_stage"
        elif kind == "certify":
            args = {"lot_id": lot, "stage": (WINE_STAGES + CORK)[stage_i],
                    "verdict": "Approved" if approve else "Rejected"}
            method = "certify_stage"
        else:
            args = {"lot_id": lot, "component": f"lot{(lot_i + 1) % 3}"}
            method = "link_component"
        led.call(actor, "traceability", method, args)
        history.append(copy.deepcopy(led.chain.state["storage"]["traceability"]["lots"]))
    for earlier, later in zip(history, history[1:]):
        for lot_id, lot in earlier.items():
            stages = later[lot_id]["stages"]
            assert [s["name"] for s in stages[: len(lot["stages"])]] == [s["name"] for s in lot["stages"]]
            for old, new in zip(lot["stages"], stages):
                assert new["certifications"][: len(old["certifications"])] == old["certifications"]
    oracle = fold_traces(led.chain)
    for lot in led.chain.query("traceability", "list_lots"):
        assert trace(led, lot) == oracle[lot]
