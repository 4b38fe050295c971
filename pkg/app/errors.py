"""Exception hierarchy shared by the lab modules."""

from __future__ import annotations


class LabError(Exception):
    """Base class for every error raised by the lab."""


class InvalidArgumentError(LabError, ValueError):
    """An operation was called outside its preconditions."""


class UnderfilledBoxError(LabError):
    """A dissection box holds fewer points than the restricted tours need."""

    def __init__(self, box: int, count: int, required: int = 4) -> None:
        super().__init__(
            f"La caja {box} tiene {count} puntos (minimo {required}); "
            "aumenta K_box o genera otra muestra."
        )
        self.box = box
        self.count = count
        self.required = required


class NotDecomposableError(LabError):
    """The weight-1/2 edges of a solution cannot be split into edge-disjoint triangles."""


class SizeLimitError(LabError):
    """An exact solver was asked for an instance above its size cap."""


class LPError(LabError):
    """Internal LP failure: unbounded model or iteration limit."""


class InvariantError(LabError):
    """A checked invariant or lemma consequence failed; always a library bug."""
