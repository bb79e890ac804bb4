"""Exception types shared across the toolkit."""

from __future__ import annotations


class IrdetectError(Exception):
    """Base class for all structured toolkit errors."""


class ShapeMismatchError(IrdetectError):
    """Tensor shape does not fit the operation that received it."""

    def __init__(self, where: str, detail: str):
        super().__init__(f"{where}: {detail}")
        self.where = where
        self.detail = detail


class NoContrastError(IrdetectError):
    """Field has fewer than two distinct values; no threshold exists."""


class NoSyncSignalError(IrdetectError):
    """Trajectories carry no usable correlation signal for time alignment."""


class SupervisionError(IrdetectError):
    """A training path received annotations it is not allowed to see."""


class DegenerateDataError(IrdetectError):
    """Not enough independent data points to fit the requested model."""


class EmptyDatasetError(IrdetectError):
    """An operation that needs at least one sample got none."""


class FormatError(IrdetectError):
    """Malformed or truncated file content."""


class TrainingDivergedError(IrdetectError):
    """Loss became non-finite; carries the last finite state for inspection."""

    def __init__(self, message: str, history=None, last_state=None):
        super().__init__(message)
        self.history = history if history is not None else []
        self.last_state = last_state
