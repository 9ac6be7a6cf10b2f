"""Exception types raised across the package."""

from __future__ import annotations


class ParameterError(ValueError):
    """An argument is out of its documented range."""


class NonErgodic(RuntimeError):
    """The policy-induced chain has no unique, reachable stationary distribution."""


class AssumptionOneViolated(RuntimeError):
    """The TD matrix is not negative definite (or is numerically singular)."""


class MixingTooSlow(RuntimeError):
    """The mixing-time scan hit its cap before the threshold was reached."""


class Diverged(RuntimeError):
    """A learner iterate became non-finite."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite iterate at step {step}")


class ConfigError(ValueError):
    """An experiment configuration is malformed."""
