"""Execution context and argument helpers for host-native contract handlers.

Handlers validate everything first and mutate storage last, so a raised
ContractError always leaves state untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

from ..encoding import is_hex
from ..errors import BadArguments


@dataclass
class Context:
    state: dict
    contract: str
    sender: str  # hex address
    height: int
    timestamp: int
    events: list = field(default_factory=list)

    @property
    def storage(self) -> dict:
        return self.state["storage"][self.contract]

    @property
    def role(self) -> str | None:
        return self.state["storage"]["identity"]["roles"].get(self.sender)

    @property
    def permissions(self) -> dict:
        return self.state["storage"]["permissioning"]

    def emit(self, kind: str, **fields: Any) -> None:
        self.events.append({"kind": kind, "contract": self.contract, **fields})


@dataclass(frozen=True)
class Method:
    handler: Callable[[Context, dict], Any]
    read_only: bool = False


def arg(args: dict, name: str, kind: type | tuple, *, optional: bool = False) -> Any:
    if name not in args or args[name] is None:
        if optional:
            return None
        raise BadArguments(f"missing argument {name!r}")
    value = args[name]
    # bool is an int subclass; never accept it where an int is wanted
    if kind is int and isinstance(value, bool):
        raise BadArguments(f"argument {name!r} must be an integer")
    if not isinstance(value, kind):
        raise BadArguments(f"argument {name!r} has wrong type {type(value).__name__}")
    return value


def address_arg(args: dict, name: str) -> str:
    value = arg(args, name, str)
    if not is_hex(value, 20):
        raise BadArguments(f"argument {name!r} is not a 20-byte lowercase hex address")
    return value


def digest_arg(args: dict, name: str, *, optional: bool = False) -> str | None:
    value = arg(args, name, str, optional=optional)
    if value is not None and not is_hex(value, 32):
        raise BadArguments(f"argument {name!r} is not a 32-byte lowercase hex digest")
    return value
