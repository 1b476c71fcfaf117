import random
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bbie.consensus import COMMIT, PROPOSE, VOTE, NetMessage, NodeState, handle_message, handle_tick
from bbie.errors import ConfigError, EmptyValidatorSet, ScenarioRefersToUnknownNode
from bbie.keys import KeyPair
from bbie.ledger import Transaction, make_genesis, verify_chain
from bbie.poa import quorum, select_proposer
from bbie.sim import Partition, SimConfig, Simulator, SubmitTx, random_partitions, run_sim

from conftest import small_config


@pytest.mark.parametrize("n,q", [(1, 1), (2, 2), (3, 3), (4, 3), (7, 5), (10, 7)])
def test_quorum(n, q):
    assert quorum(n) == q == (2 * n) // 3 + 1


def test_select_proposer():
    a, b, c = b"\x01" * 20, b"\x02" * 20, b"\x03" * 20
    assert select_proposer(0, [a, b, c]) == a
    assert select_proposer(4, [a, b, c]) == b
    assert select_proposer(7, [a]) == a
    assert select_proposer(4, [c, a, b]) == b
    with pytest.raises(EmptyValidatorSet):
        select_proposer(0, [])


def _nodes(n=4):
    cfg = small_config(validators=n)
    genesis = make_genesis(cfg.genesis_args())
    return cfg, {s.name: NodeState(s.name, s.key, genesis.copy()) for s in cfg.nodes}


def _proposer(nodes, height=1):
    return next(n for n in nodes.values() if n.is_validator and
                select_proposer(height, n.chain.validators()) == n.address)


def test_round_flow():
    cfg, nodes = _nodes(4)
    proposer = _proposer(nodes)
    [propose] = handle_tick(proposer, 60_000)
    assert propose.kind == PROPOSE
    others = [n for n in nodes.values() if n is not proposer and n.is_validator]
    votes = [handle_message(n, propose, 60_010) for n in others]
    assert all(len(v) == 1 and v[0].kind == VOTE and v[0].to == proposer.address for v in votes)
    assert handle_message(proposer, votes[0][0], 60_020) == []
    [commit] = handle_message(proposer, votes[1][0], 60_030)
    assert commit.kind == COMMIT and proposer.chain.height == 1
    for n in nodes.values():
        if n is not proposer:
            handle_message(n, commit, 60_040)
    assert {n.chain.head_digest for n in nodes.values()} == {proposer.chain.head_digest}
    assert verify_chain(proposer.chain)


def test_bad_parent_proposal_is_rejected():
    _, nodes = _nodes(4)
    proposer = _proposer(nodes)
    [propose] = handle_tick(proposer, 60_000)
    block = propose.payload["block"]
    bad = NetMessage(PROPOSE, {"block": replace(block, parent=bytes(32))}, proposer.address)
    voter = next(n for n in nodes.values() if n.is_validator and n is not proposer)
    assert handle_message(voter, bad, 60_010) == []
    assert voter.counters["rejected_proposals"] == 1


def test_unenrolled_sender_dropped():
    _, nodes = _nodes(4)
    stranger = KeyPair.from_name("stranger")
    node = next(iter(nodes.values()))
    msg = NetMessage(VOTE, {"height": 1, "block_id": bytes(32), "vote": None}, stranger.address)
    assert handle_message(node, msg, 0) == []
    assert node.counters["dropped_unenrolled"] == 1


def test_simple_node_never_proposes_or_votes():
    _, nodes = _nodes(4)
    simple = nodes["s1"]
    assert not simple.is_validator
    for h in range(20):
        assert handle_tick(simple, h * 60_000) == []
    proposer = _proposer(nodes)
    [propose] = handle_tick(proposer, 60_000)
    assert handle_message(simple, propose, 60_010) == []


def test_liveness_and_agreement_one_hour():
    cfg = small_config(validators=4)
    sc = SimConfig(cfg, seed=5, latency_ms=(10, 200), block_interval=60, duration=3600)
    sim = Simulator(sc)
    sim.run()
    sim.finish()
    chains = [n.chain for n in sim.nodes.values()]
    assert min(c.height for c in chains) >= 3600 // 60 - 1
    shortest = min(c.height for c in chains)
    assert len({tuple(c.digests[: shortest + 1]) for c in chains}) == 1
    assert not sim.transcript.height_conflicts()


def test_determinism_and_scenario_events():
    cfg = small_config(validators=4)
    key = cfg.key("winery")
    txs = [SubmitTx(100 + i, "s1", Transaction.create(key, "traceability", "register_lot",
                                                     {"lot_id": f"l{i}", "product": "p"}, i)) for i in range(5)]
    sc = SimConfig(cfg, seed=9, latency_ms=(10, 50), block_interval=60, duration=900)
    a, b = run_sim(sc, txs), run_sim(sc, txs)
    assert a.lines() == b.lines()
    assert a.lines() != run_sim(SimConfig(cfg, seed=10, latency_ms=(10, 50), block_interval=60,
                                          duration=900), txs).lines()
    # every node keeps pace with the schedule
    for final in a.finals():
        assert final["height"] >= 900 // 60 - 1


def test_two_of_four_isolated_blocks_commits():
    cfg = small_config(validators=4)
    part = Partition(0, 3600, frozenset({"v1", "v2"}))
    sim = Simulator(SimConfig(cfg, seed=1, latency_ms=(10, 50), block_interval=60, duration=3600,
                              partitions=[part]))
    transcript = sim.run()
    assert transcript.commits() == []
    assert all(n.chain.height == 0 for n in sim.nodes.values())


def test_partition_heals_and_catches_up():
    cfg = small_config(validators=4)
    part = Partition(600, 1800, frozenset({"v4"}))
    sim = Simulator(SimConfig(cfg, seed=2, latency_ms=(10, 50), block_interval=60, duration=3600,
                              partitions=[part]))
    sim.run()
    sim.finish()
    heights = {n.chain.height for n in sim.nodes.values()}
    assert max(heights) - min(heights) <= 1
    assert not sim.transcript.height_conflicts()


def test_membership_only_validators_sign():
    cfg = small_config(validators=4)
    sim = Simulator(SimConfig(cfg, seed=3, latency_ms=(10, 50), block_interval=60, duration=1200))
    sim.run()
    validators = {n.key.address for n in cfg.nodes if n.kind == "validator"}
    for block in sim.nodes["v1"].chain.blocks[1:]:
        assert block.proposer in validators
        assert {v.address for v in block.votes} <= validators


def test_mempool_never_holds_committed():
    cfg = small_config(validators=4)
    key = cfg.key("winery")
    sim = Simulator(SimConfig(cfg, seed=4, latency_ms=(10, 50), block_interval=60, duration=600))
    for i in range(10):
        sim.submit("v2", Transaction.create(key, "traceability", "register_lot", {"lot_id": f"x{i}", "product": "p"}, i),
                   (i + 1) * 30_000)
    sim.run()
    for node in sim.nodes.values():
        assert not set(node.mempool) & set(node.chain.tx_index)
        assert node.chain.query("traceability", "list_lots") == sorted(f"x{i}" for i in range(10))


def test_config_errors():
    cfg = small_config(validators=4)
    with pytest.raises(ConfigError):
        SimConfig(cfg, latency_ms=(50, 10))
    with pytest.raises(ScenarioRefersToUnknownNode):
        SimConfig(cfg, partitions=[Partition(0, 10, frozenset({"nope"}))])
    with pytest.raises(ScenarioRefersToUnknownNode):
        Simulator(SimConfig(cfg)).submit("nope", None)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_safety_under_random_partitions(seed):
    cfg = small_config(validators=4)
    names = [n.name for n in cfg.nodes if n.kind == "validator"]
    parts = random_partitions(random.Random(seed), names, 1800)
    sim = Simulator(SimConfig(cfg, seed=seed, latency_ms=(10, 100), block_interval=60, duration=1800,
                              partitions=parts))
    transcript = sim.run()
    assert transcript.height_conflicts() == []
