"""Exception hierarchy shared across the toolkit.

Every error that can surface through the CLI carries enough structure to be
rendered as a machine-readable JSON object on stderr.
"""

from __future__ import annotations


class ToolkitError(Exception):
    """Base class for all toolkit failures."""

    exit_code = 1

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.message = message
        self.details = {k: v for k, v in details.items() if v is not None}

    def to_json_obj(self) -> dict:
        obj = {"error": type(self).__name__, "message": self.message}
        obj.update(self.details)
        return obj


class ParseError(ToolkitError):
    """Input bytes could not be decoded into records.

    ``line`` is 1-based for newline-delimited inputs; ``offset`` is a byte
    offset for malformed single-document JSON.
    """


class ValidationError(ToolkitError):
    """Well-formed input violating a documented invariant."""


class InputError(ToolkitError):
    """Missing or unusable input file / configuration. CLI exits with 2."""

    exit_code = 2


class TrainingDivergedError(ToolkitError):
    """Autoencoder weights became non-finite during training."""
