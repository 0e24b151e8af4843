"""Exception hierarchy shared by every hyperhash module.

Each class carries the process exit code the command line maps it to.
"""

from typing import Any, List, Optional, Tuple


class HyperHashError(Exception):
    """Base class for all errors raised by the package."""

    exit_code = 1


class InvalidArgumentError(HyperHashError, ValueError):
    """An argument violates a documented precondition."""

    exit_code = 2


class UndefinedSimilarityError(InvalidArgumentError):
    """Cosine similarity requested for an all-zero vector."""


class IncompatibleArtifactError(HyperHashError):
    """Two pipeline artifacts were produced under different settings."""

    exit_code = 3

    def __init__(self, mismatches: List[Tuple[str, Any, Any]]):
        """
        Args:
            mismatches: (field, expected, found) triples
        """
        self.mismatches = list(mismatches)
        details = ", ".join(
            f"{field}: expected {expected!r}, found {found!r}"
            for field, expected, found in self.mismatches
        )
        super().__init__(f"incompatible artifacts ({details})")


class CorruptFileError(HyperHashError):
    """A persisted file failed a structural check."""

    exit_code = 4

    def __init__(self, field: str, message: str, path: Optional[str] = None):
        self.field = field
        self.path = path
        where = f" in {path}" if path else ""
        super().__init__(f"corrupt file{where}: {field}: {message}")


def require(condition: bool, message: str) -> None:
    """Raise InvalidArgumentError with `message` unless `condition` holds."""
    if not condition:
        raise InvalidArgumentError(message)
