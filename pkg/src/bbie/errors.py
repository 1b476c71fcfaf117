"""Exception hierarchy shared across the ledger, contracts and services."""

from __future__ import annotations


class BBIEError(Exception):
    """Base class for every error raised by this package."""

    @property
    def kind(self) -> str:
        return type(self).__name__


# encoding / ledger
class UnencodableValue(BBIEError, TypeError):
    pass


class DecodeError(BBIEError, ValueError):
    pass


class ChainError(BBIEError):
    """A block failed validation while being appended or verified."""

    def __init__(self, height: int, detail: str = ""):
        self.height = height
        self.detail = detail
        super().__init__(f"{self.kind} at height {height}: {detail}" if detail else f"{self.kind} at height {height}")


class BadParent(ChainError):
    pass


class BadHeight(ChainError):
    pass


class StateMismatch(ChainError):
    pass


class InvalidTxSignature(ChainError):
    pass


class DuplicateTransaction(ChainError):
    pass


class InsufficientVotes(ChainError):
    pass


class BadGenesis(ChainError):
    pass


class BadProposer(ChainError):
    pass


# contracts; raised inside handlers and surfaced in receipts
class ContractError(BBIEError):
    pass


class UnknownContract(ContractError):
    pass


class UnknownMethod(ContractError):
    pass


class Unauthorized(ContractError):
    pass


class BadArguments(ContractError):
    pass


class NotAdmin(ContractError):
    pass


class AlreadyAdmin(ContractError):
    pass


class AlreadyEnrolled(ContractError):
    pass


class UnknownNode(ContractError):
    pass


class AlreadyValidator(ContractError):
    pass


class NotDeployer(ContractError):
    pass


class DuplicateContract(ContractError):
    pass


class UnknownRole(ContractError):
    pass


class DuplicateLot(ContractError):
    pass


class UnknownLot(ContractError):
    pass


class UnknownStage(ContractError):
    pass


class OutOfOrderStage(ContractError):
    pass


class LotBlocked(ContractError):
    pass


class ComponentIncomplete(ContractError):
    pass


class CycleDetected(ContractError):
    pass


class AlreadyLinked(ContractError):
    pass


class DuplicateBatch(ContractError):
    pass


class AnchorConflict(ContractError):
    pass


# identity
class TokenError(BBIEError):
    pass


class BadToken(TokenError):
    pass


class BadSignature(BBIEError):
    """A signature did not verify (tokens, transactions, telemetry records)."""


class Expired(TokenError):
    pass


class NotYetValid(TokenError):
    pass


# consensus / simulator
class EmptyValidatorSet(BBIEError, ValueError):
    pass


class ScenarioRefersToUnknownNode(BBIEError, ValueError):
    pass


class ScenarioValidation(BBIEError, ValueError):
    pass


class ConfigError(BBIEError, ValueError):
    pass


# tangle
class TangleError(BBIEError):
    pass


class EmptyTangle(TangleError):
    pass


class UnknownParent(TangleError):
    pass


class DuplicateId(TangleError):
    pass


class NothingToConfirm(TangleError):
    pass


# anchoring
class StubRejected(BBIEError):
    pass
