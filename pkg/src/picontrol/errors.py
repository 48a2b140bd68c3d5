"""Exception types shared across the toolkit."""

from __future__ import annotations


class PicontrolError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(PicontrolError, ValueError):
    """Invalid configuration value, shape mismatch, or unknown config key."""


class IntegrationDivergedError(PicontrolError, RuntimeError):
    """The integrator produced a non-finite state.

    Carries enough context to identify where the blow-up happened.
    """

    def __init__(self, message: str, *, time: float | None = None,
                 rollout_index: int | None = None):
        super().__init__(message)
        self.time = time
        self.rollout_index = rollout_index


class DegenerateBatchError(PicontrolError, RuntimeError):
    """Every cost in a batch is non-finite; no weights can be formed."""


class PlanningFailedError(PicontrolError, RuntimeError):
    """A plan step could not produce a usable update (e.g. all rollouts diverged)."""

    def __init__(self, message: str, *, step_index: int | None = None,
                 diagnostics=None):
        super().__init__(message)
        self.step_index = step_index
        self.diagnostics = diagnostics


class InsufficientSamplesError(PicontrolError, ValueError):
    """Too few samples for the requested statistic."""


class InvalidSchemeError(PicontrolError, ValueError):
    """A multiple-importance-sampling reweighting violates the unbiasedness condition."""
