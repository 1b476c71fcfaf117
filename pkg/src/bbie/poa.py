"""Proof-of-authority scheduling primitives shared by the ledger and the network."""

from __future__ import annotations

from typing import Sequence

from .errors import EmptyValidatorSet


def quorum(n: int) -> int:
    """Votes needed to commit among ``n`` validators: floor(2n/3) + 1."""
    if n < 1:
        raise ValueError("quorum needs at least one validator")
    return (2 * n) // 3 + 1


def select_proposer(height: int, validators: Sequence[bytes]) -> bytes:
    """Round-robin proposer over validators sorted by address bytes."""
    if not validators:
        raise EmptyValidatorSet("no validators enrolled")
    ordered = sorted(validators)
    return ordered[height % len(ordered)]
