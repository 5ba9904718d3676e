"""
Exception hierarchy.

Library code raises these; only `halfline.run` catches them and turns the
category into a process exit code.
"""

from typing import Any, Dict, Optional


class HalflineError(Exception):
    exit_code = 1


class ConfigError(HalflineError):
    exit_code = 2


class DomainError(HalflineError, ValueError):
    exit_code = 3


class UsageError(HalflineError, ValueError):
    exit_code = 4


class NumericError(HalflineError):
    """Quadrature or iteration failure; `diagnostics` carries what was measured."""

    exit_code = 5

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics: Dict[str, Any] = dict(diagnostics or {})

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostics:
            return base
        details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        return f"{base} ({details})"


class ConstructionError(HalflineError):
    exit_code = 6


class NonConvergenceError(NumericError):
    exit_code = 7
