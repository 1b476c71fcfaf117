"""Identity management on two planes.

Off-chain: signed bearer tokens carrying only a UUID, a subject, a role and
the validity window. The wire form is ``base64url(claims) "." base64url(sig)``
where ``claims`` is the canonical encoding and ``sig`` an Ed25519 signature
by the gateway issuer.

On-chain: the ``identity`` contract maps addresses to a single role, and
:func:`authorize` checks a caller's role against a method's ACL.
"""

from __future__ import annotations

import base64
import random
import re
import uuid
from dataclasses import dataclass
from typing import Iterable

from .contracts.base import Context, Method, address_arg, arg
from .encoding import canonical_decode, canonical_encode
from .errors import (
    BadSignature,
    BadToken,
    ConfigError,
    DecodeError,
    Expired,
    NotAdmin,
    NotYetValid,
    UnknownContract,
    UnknownMethod,
    UnknownRole,
)
from .keys import KeyPair, verify_signature

ROLES = (
    "wine_producer",
    "cork_producer",
    "health_authority",
    "quality_authority",
    "baas_provider",
    "external_user",
)
CLAIM_FIELDS = ("id", "sub", "role", "iat", "exp")
_UUID_RE = re.compile(r"^[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}$")


@dataclass(frozen=True)
class TokenClaims:
    id: str
    sub: str
    role: str
    iat: int
    exp: int

    def to_dict(self) -> dict:
        return {"id": self.id, "sub": self.sub, "role": self.role, "iat": self.iat, "exp": self.exp}

    @classmethod
    def from_dict(cls, data: dict) -> "TokenClaims":
        if not isinstance(data, dict) or sorted(data) != sorted(CLAIM_FIELDS):
            raise BadToken("claims must carry exactly id, sub, role, iat, exp")
        ints_ok = all(isinstance(data[k], int) and not isinstance(data[k], bool) for k in ("iat", "exp"))
        strs_ok = all(isinstance(data[k], str) for k in ("id", "sub", "role"))
        if not (ints_ok and strs_ok):
            raise BadToken("claim field has the wrong type")
        if not _UUID_RE.match(data["id"]):
            raise BadToken("token id is not a UUID")
        if data["exp"] <= data["iat"]:
            raise BadToken("exp must be after iat")
        return cls(**{k: data[k] for k in CLAIM_FIELDS})


def _b64e(raw: bytes) -> str:
    return base64.urlsafe_b64encode(raw).rstrip(b"=").decode("ascii")


def _b64d(text: str) -> bytes:
    if not re.fullmatch(r"[A-Za-z0-9_-]*", text):
        raise BadToken("token segment is not base64url")
    return base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))


@dataclass(frozen=True)
class Token:
    claims: TokenClaims
    sig: bytes

    def encode(self) -> str:
        return f"{_b64e(canonical_encode(self.claims.to_dict()))}.{_b64e(self.sig)}"

    @classmethod
    def decode(cls, text: str) -> "Token":
        parts = text.split(".") if isinstance(text, str) else []
        if len(parts) != 2:
            raise BadToken("token must have two dot-separated segments")
        try:
            claims = canonical_decode(_b64d(parts[0]))
            sig = _b64d(parts[1])
        except (DecodeError, ValueError) as exc:
            raise BadToken(str(exc)) from exc
        return cls(TokenClaims.from_dict(claims), sig)

    def __str__(self) -> str:
        return self.encode()


def new_uuid(rng: random.Random) -> str:
    return str(uuid.UUID(int=rng.getrandbits(128), version=4))


def issue_token(
    issuer: KeyPair,
    sub: str,
    role: str,
    now: int,
    ttl: int,
    *,
    rng: random.Random,
    vocabulary: Iterable[str] = ROLES,
) -> Token:
    if role not in tuple(vocabulary):
        raise UnknownRole(role)
    if ttl <= 0:
        raise ValueError("ttl must be positive")
    claims = TokenClaims(id=new_uuid(rng), sub=sub, role=role, iat=now, exp=now + ttl)
    return Token(claims, issuer.sign(canonical_encode(claims.to_dict())))


def verify_token(issuer_pub: bytes, token: Token | str, now: int) -> TokenClaims:
    """Return the claims iff the signature holds and ``iat <= now < exp``."""
    if isinstance(token, str):
        token = Token.decode(token)
    if not verify_signature(issuer_pub, canonical_encode(token.claims.to_dict()), token.sig):
        raise BadSignature("token signature does not verify under the issuer key")
    if now < token.claims.iat:
        raise NotYetValid(f"token valid from {token.claims.iat}, now {now}")
    if now >= token.claims.exp:
        raise Expired(f"token expired at {token.claims.exp}, now {now}")
    return token.claims


# on-chain role registry


def init_storage(params: dict) -> dict:
    vocabulary = list(params.get("vocabulary", ROLES))
    roles = dict(params.get("roles", {}))
    for addr, role in roles.items():
        if role not in vocabulary:
            raise ConfigError(f"role {role!r} bound to {addr} is not in the vocabulary")
    return {"roles": {k: roles[k] for k in sorted(roles)}, "vocabulary": vocabulary}


def bind_address_role(registry: dict, admins: list, caller: str, addr: str, role: str) -> str | None:
    """Bind ``addr`` to ``role``; returns the previous role (overwrites allowed)."""
    if caller not in admins:
        raise NotAdmin(f"{caller} is not an administrator")
    if role not in registry["vocabulary"]:
        raise UnknownRole(role)
    previous = registry["roles"].get(addr)
    registry["roles"][addr] = role
    return previous


def authorize(roles: dict, contracts: dict, addr: str, contract: str, method: str) -> bool:
    """True iff ``addr`` holds a role listed in the ACL of ``contract.method``.

    ``contracts`` is the host's contract table (id -> {"methods": {name: acl}}).
    An ACL of ``None`` marks an open method, used by the public anchor registry.
    """
    if contract not in contracts:
        raise UnknownContract(contract)
    methods = contracts[contract]["methods"]
    if method not in methods:
        raise UnknownMethod(f"{contract}.{method}")
    acl = methods[method]
    if acl is None:
        return True
    role = roles.get(addr)
    return role is not None and role in acl


def _bind(ctx: Context, args: dict) -> None:
    addr = address_arg(args, "addr")
    role = arg(args, "role", str)
    previous = bind_address_role(ctx.storage, ctx.permissions["admins"], ctx.sender, addr, role)
    ctx.emit("role_bound", address=addr, role=role, previous=previous, by=ctx.sender)


def _role_of(ctx: Context, args: dict) -> str | None:
    return ctx.storage["roles"].get(address_arg(args, "addr"))


METHODS = {
    "bind_address_role": Method(_bind),
    "role_of": Method(_role_of, read_only=True),
}

