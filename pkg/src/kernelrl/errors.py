"""Exception types shared across the package."""

from __future__ import annotations


class ContractViolation(ValueError):
    """An operation was called with inputs that break its preconditions."""


class BudgetError(ContractViolation):
    """The irreducible part of a prompt does not fit the token budget."""


class ConfigError(ValueError):
    """A run configuration failed validation. Carries a field-level message."""


class StoreConflictError(Exception):
    """Append with an already-used unique key."""


class RunNotFoundError(KeyError):
    """Requested run id does not exist in the store."""


class ShortfallError(Exception):
    """Stored data is insufficient for the requested report."""

    def __init__(self, task_id: str, message: str):
        super().__init__(message)
        self.task_id = task_id


class PolicyError(Exception):
    """The policy produced output that could not be used for this turn."""


class ExecutorUnavailable(Exception):
    """The executor failed mid-step. Carries partial-trajectory diagnostics."""

    def __init__(self, message: str, *, task_id: str = "", trajectory_index: int = -1,
                 turn_index: int = -1):
        super().__init__(message)
        self.task_id = task_id
        self.trajectory_index = trajectory_index
        self.turn_index = turn_index
