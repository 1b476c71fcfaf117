import hashlib
import json
import subprocess
import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bbie.encoding import canonical_decode, canonical_encode, digest_of, sha256
from bbie.errors import DecodeError, UnencodableValue
from bbie.keys import KeyPair, derive_address, verify_signature

values = st.recursive(
    st.none() | st.booleans() | st.integers() | st.text() | st.binary(max_size=16),
    lambda children: st.lists(children, max_size=5) | st.dictionaries(st.text(max_size=8), children, max_size=5),
    max_leaves=20,
)


def test_sha256_empty_vector():
    # reference value from hashlib, not from the package
    assert sha256(b"").hex() == hashlib.sha256(b"").hexdigest()
    assert sha256(b"").hex() == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


def test_examples():
    assert canonical_encode([]) == b"[]"
    assert canonical_encode({"b": 1, "a": 2}) == b'{"a":2,"b":1}'
    assert canonical_encode({"k": b"\x01\xff"}) == b'{"k":"01ff"}'
    assert canonical_encode("caffè") == "\"caffè\"".encode()


@pytest.mark.parametrize("bad", [1.5, {"x": [0.0]}, {1: "a"}, {"s": {1, 2}}, float("nan")])
def test_rejects_unencodable(bad):
    with pytest.raises(UnencodableValue):
        canonical_encode(bad)


def test_decode_rejects_floats_and_junk():
    with pytest.raises(DecodeError):
        canonical_decode(b'{"a":1.0}')
    with pytest.raises(DecodeError):
        canonical_decode(b"{nope")


@settings(max_examples=300)
@given(values)
def test_encoding_matches_stdlib_oracle(value):
    def plain(v):
        if isinstance(v, bytes):
            return v.hex()
        if isinstance(v, list):
            return [plain(x) for x in v]
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        return v

    expected = json.dumps(plain(value), sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode()
    assert canonical_encode(value) == expected
    assert canonical_decode(canonical_encode(value)) == plain(value)


def _corpus(n):
    import random

    rng = random.Random(42)

    def make(depth=0):
        r = rng.random()
        if depth > 3 or r < 0.5:
            return rng.choice([None, True, False, rng.randint(-10**12, 10**12), "s" * rng.randint(0, 5), "ü€"])
        if r < 0.75:
            return [make(depth + 1) for _ in range(rng.randint(0, 4))]
        return {f"k{rng.randint(0, 9)}": make(depth + 1) for _ in range(rng.randint(0, 4))}

    return [make() for _ in range(n)]


def test_determinism_10k_values_across_processes():
    corpus = _corpus(10_000)
    here = hashlib.sha256(b"".join(canonical_encode(v) + b"\n" for v in corpus)).hexdigest()
    again = hashlib.sha256(b"".join(canonical_encode(v) + b"\n" for v in corpus)).hexdigest()
    script = (
        "import hashlib, sys\n"
        "sys.path.insert(0, %r)\n"
        "from test_encoding import _corpus\n"
        "from bbie.encoding import canonical_encode\n"
        "print(hashlib.sha256(b''.join(canonical_encode(v) + b'\\n' for v in _corpus(10000))).hexdigest())\n"
    ) % str(__import__("pathlib").Path(__file__).parent)
    out = subprocess.run([sys.executable, "-c", script], capture_output=True, text=True, check=True,
                         env={"PYTHONHASHSEED": "123", "PATH": ""})
    assert here == again == out.stdout.strip()


def test_digest_of_is_sha_of_encoding():
    assert digest_of({"a": 1}) == hashlib.sha256(b'{"a":1}').digest()


def test_keys_and_addresses(tmp_path):
    k = KeyPair.from_name("alice")
    assert k == KeyPair.from_name("alice")
    assert k.address == hashlib.sha256(k.public).digest()[:20] == derive_address(k.public)
    sig = k.sign(b"msg")
    assert verify_signature(k.public, b"msg", sig)
    assert not verify_signature(k.public, b"msh", sig)
    assert not verify_signature(KeyPair.from_name("bob").public, b"msg", sig)
    k.save(tmp_path / "k.json")
    assert KeyPair.load(tmp_path / "k.json") == k
    assert KeyPair.generate().address != KeyPair.generate().address
