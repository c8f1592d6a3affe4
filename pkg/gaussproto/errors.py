"""
Exceptions and diagnostic counters for gaussproto.

Contract violations are raised as exceptions. Soft problems that the
training loop is expected to survive (skipped updates, clamped variances,
empty negative pools) are counted instead, so that a run can report them
at the end without aborting.
"""

import logging
import threading
from collections import Counter
from typing import Dict, Optional

logger = logging.getLogger(__name__)


class GaussProtoError(Exception):
    """Base class for all gaussproto errors."""


class ContractViolation(GaussProtoError, ValueError):
    """A precondition of an operation does not hold."""


class ConfigError(GaussProtoError, ValueError):
    """A configuration file or override is invalid."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class ParseError(GaussProtoError, ValueError):
    """A binary container could not be decoded."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class CheckpointMismatch(GaussProtoError, ValueError):
    """A checkpoint does not fit the dataset or build it is used with."""


class NumericFailure(GaussProtoError, RuntimeError):
    """A loss or activation became non-finite."""


class DiagnosticCounter:
    """
    Thread-safe named event counter.

    Pure numerical functions may be called from several threads, so every
    increment goes through a lock.
    """

    def __init__(self):
        self._counts: Counter = Counter()
        self._lock = threading.Lock()

    def increment(self, name: str, amount: int = 1) -> None:
        """Add ``amount`` to the counter ``name``."""
        if amount <= 0:
            return
        with self._lock:
            self._counts[name] += amount
        logger.debug("diagnostic %s += %d", name, amount)

    def get(self, name: str) -> int:
        with self._lock:
            return self._counts.get(name, 0)

    def snapshot(self) -> Dict[str, int]:
        """Return a copy of all counters."""
        with self._lock:
            return dict(self._counts)

    def reset(self) -> None:
        with self._lock:
            self._counts.clear()


# Global counter instance
_global_diagnostics: Optional[DiagnosticCounter] = None


def get_diagnostics() -> DiagnosticCounter:
    """
    Get or create the global diagnostic counter.

    Returns:
        The process-wide DiagnosticCounter instance
    """
    global _global_diagnostics

    if _global_diagnostics is None:
        _global_diagnostics = DiagnosticCounter()

    return _global_diagnostics
