"""Ed25519 key pairs and address derivation."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .encoding import sha256

ADDRESS_SIZE = 20
PUBLIC_KEY_SIZE = 32


def derive_address(public: bytes) -> bytes:
    """First 20 bytes of SHA-256(public key)."""
    return sha256(bytes(public))[:ADDRESS_SIZE]


@lru_cache(maxsize=4096)
def _private_key(secret: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(secret)


@lru_cache(maxsize=4096)
def _public_key(public: bytes) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(public)


def verify_signature(public: bytes, message: bytes, signature: bytes) -> bool:
    return _verify(bytes(public), bytes(message), bytes(signature))


# Simulated nodes share a process and check the same votes and txs; the check is pure.
@lru_cache(maxsize=1 << 16)
def _verify(public: bytes, message: bytes, signature: bytes) -> bool:
    try:
        _public_key(public).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


@dataclass(frozen=True)
class KeyPair:
    secret: bytes = field(repr=False)
    public: bytes
    address: bytes

    @classmethod
    def from_secret(cls, secret: bytes) -> "KeyPair":
        sk = _private_key(bytes(secret))
        public = sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        return cls(bytes(secret), public, derive_address(public))

    @classmethod
    def generate(cls) -> "KeyPair":
        return cls.from_secret(os.urandom(32))

    @classmethod
    def from_name(cls, name: str, domain: str = "bbie-sim") -> "KeyPair":
        """Deterministic key for named simulation principals. Not for production keys."""
        return cls.from_secret(sha256(f"{domain}:{name}".encode()))

    def sign(self, message: bytes) -> bytes:
        return _private_key(self.secret).sign(bytes(message))

    def to_json(self) -> dict:
        return {"secret": self.secret.hex(), "public": self.public.hex(), "address": self.address.hex()}

    @classmethod
    def from_json(cls, data: dict) -> "KeyPair":
        kp = cls.from_secret(bytes.fromhex(data["secret"]))
        if "address" in data and data["address"] != kp.address.hex():
            raise ValueError("key file address does not match its secret")
        return kp

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "KeyPair":
        return cls.from_json(json.loads(Path(path).read_text()))
