import pytest

from bbie.config import NetworkConfig
from bbie.keys import KeyPair
from bbie.ledger import Block, Chain, Transaction, Vote, append_block, block_digest, execute_block, make_genesis
from bbie.poa import select_proposer
from bbie.scenario import bundled

SMALL = {
    "version": 1,
    "chain_id": "test-chain",
    "principals": {
        "admin": {"role": "baas_provider", "admin": True, "deployer": True},
        "winery": {"role": "wine_producer"},
        "corks": {"role": "cork_producer"},
        "asl": {"role": "health_authority"},
        "laore": {"role": "quality_authority"},
        "consumer": {"role": "external_user"},
        "coord": {"role": "baas_provider"},
        "outsider": {},
        "issuer": {},
        "miner": {},
        "anchorer": {},
    },
    "nodes": [{"name": "v1", "kind": "validator"}, {"name": "s1", "kind": "simple"}],
    "anchor": {"service": "anchorer", "stub_validator": "miner", "node": "s1"},
    "tangle": {"coordinator": "coord", "node": "s1"},
    "issuer": "issuer",
    "key_domain": "bbie-test",
}


def small_config(validators: int = 1, **overrides) -> NetworkConfig:
    raw = {**SMALL, **overrides}
    if validators != 1:
        raw["nodes"] = [{"name": f"v{i}", "kind": "validator"} for i in range(1, validators + 1)]
        raw["nodes"].append({"name": "s1", "kind": "simple"})
    return NetworkConfig.from_dict(raw)


class Ledger:
    """A chain plus the keys needed to mine blocks on it directly."""

    def __init__(self, config: NetworkConfig):
        self.config = config
        self.chain: Chain = make_genesis(config.genesis_args())
        self.nonces: dict[str, int] = {}
        self.clock = 0

    def tx(self, actor: str, contract: str, method: str, args: dict) -> Transaction:
        nonce = self.nonces.get(actor, 0)
        self.nonces[actor] = nonce + 1
        return Transaction.create(self.config.key(actor), contract, method, args, nonce)

    def mine(self, *txs: Transaction) -> Block:
        chain = self.chain
        self.clock += 60
        validators = chain.validators()
        height = chain.height + 1
        proposer = select_proposer(height, validators)
        draft = Block(height, chain.head_digest, self.clock, proposer, tuple(txs), b"\0" * 32)
        result = execute_block(chain, draft)
        block = Block(height, chain.head_digest, self.clock, proposer, tuple(txs), result.state_digest)
        keys = [n.key for n in self.config.nodes if n.key.address in validators]
        block = block.with_votes([Vote.sign(k, block_digest(block)) for k in keys])
        append_block(chain, block, result=result)
        return block

    def call(self, actor: str, contract: str, method: str, args: dict):
        tx = self.tx(actor, contract, method, args)
        self.mine(tx)
        return self.chain.receipts[tx.id]

    def addr(self, name: str) -> str:
        return self.config.key(name).address.hex()


@pytest.fixture
def ledger() -> Ledger:
    return Ledger(small_config())


@pytest.fixture(scope="session")
def wine_config() -> NetworkConfig:
    return NetworkConfig.load(bundled("wine_config.json"))


@pytest.fixture(scope="session")
def wine_result(wine_config):
    from bbie.scenario import ScenarioFile, run_scenario

    return run_scenario(wine_config, ScenarioFile.load(bundled("wine_scenario.json")))


@pytest.fixture
def key() -> KeyPair:
    return KeyPair.from_name("test/key")
