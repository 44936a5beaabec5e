"""
Exception hierarchy for ebsim.

Every error carries the process exit code the CLI reports for it.
"""

from typing import Optional


class EbsimError(Exception):
    """Base class for all simulator errors."""

    exit_code = 1


class ConfigError(EbsimError, ValueError):
    """Invalid scenario, parameter set or input file detected at load time."""

    exit_code = 2


class TopologyError(EbsimError):
    """Malformed or disconnected topology."""

    exit_code = 3

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class RoutingError(EbsimError):
    """Routing hole or unreachable destination; the fabric never drops packets."""

    exit_code = 3


class ModelInvariantError(EbsimError, AssertionError):
    """A model invariant was broken. Always a bug, never a user error."""

    exit_code = 4

    def __init__(self, message: str, time_ps: Optional[int] = None, component: Optional[str] = None) -> None:
        context = []
        if time_ps is not None:
            context.append(f"t={time_ps}ps")
        if component:
            context.append(component)
        if context:
            message = f"{message} [{', '.join(context)}]"
        super().__init__(message)
        self.time_ps = time_ps
        self.component = component


class ContractViolation(ModelInvariantError):
    """Engine API misuse, such as scheduling an event in the past."""
