"""Exception hierarchy shared by every module."""

from __future__ import annotations


class CTMSError(Exception):
    """Base class for all package errors."""


class DomainError(CTMSError, ValueError):
    """An argument lies outside the domain of the operation."""


class ConfigurationError(CTMSError, ValueError):
    """A configuration cannot be run (CFL violation, empty feasible set, ...)."""


class SimulationError(CTMSError, RuntimeError):
    """The dynamics produced an inconsistent intermediate value.

    Carries the offending step index and, when known, the design being
    simulated so optimizers can report which candidate failed.
    """

    def __init__(self, message: str, step: int | None = None, design=None):
        self.step = step
        self.design = design
        parts = [message]
        if step is not None:
            parts.append(f"at step k={step}")
        if design is not None:
            parts.append(f"for design {design}")
        super().__init__(" ".join(parts))
