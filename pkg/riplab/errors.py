"""Exception hierarchy shared by every riplab module.

Each error carries the process exit code the harness reports for it.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from riplab.schemas.recovery import RecoveryResult


class RiplabError(Exception):
    """Base class for all riplab errors."""

    exit_code: int = 1


class InvalidArgumentError(RiplabError, ValueError):
    """An argument violates an operation's precondition."""

    exit_code = 1


class SizeLimitError(InvalidArgumentError):
    """An exact enumeration request exceeds the supported size."""


class ConfigError(InvalidArgumentError):
    """A harness configuration value is malformed or out of range."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class NumericalFailureError(RiplabError, ArithmeticError):
    """A numerical routine broke down or diverged."""

    exit_code = 2

    def __init__(self, message: str, partial: RecoveryResult | None = None):
        super().__init__(message)
        self.partial = partial


class TruncationError(NumericalFailureError):
    """A truncated series hit its term cap before converging."""


class SelfTestFailure(RiplabError):
    """A self-test oracle check did not hold."""

    exit_code = 2
