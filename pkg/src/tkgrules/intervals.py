"""Yearly time points, validity intervals, and their 3-class temporal relation.

Intervals carry integer year endpoints.  An endpoint may also be *unknown*
(missing from the source data) or, for end times, the open-ended marker
*present*.  The three temporal-relation classes collapse the 13 Allen
interval relations into ``before`` / ``touching`` / ``after``: two intervals
are ``before``/``after`` one another when they are disjoint in the obvious
order, and ``touching`` whenever they share at least one year.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

# Sentinel year values used in the packed float representation.
UNKNOWN = None
PRESENT = "present"

_UNKNOWN_F = math.nan
_PRESENT_F = math.inf


class TRClass(enum.IntEnum):
    """Temporal relation between two intervals, grouped into 3 classes."""

    BEFORE = 0
    TOUCHING = 1
    AFTER = 2

    @property
    def converse(self) -> "TRClass":
        """The relation seen from the second interval's point of view."""
        if self is TRClass.BEFORE:
            return TRClass.AFTER
        if self is TRClass.AFTER:
            return TRClass.BEFORE
        return TRClass.TOUCHING

    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "TRClass":
        try:
            return cls[label.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown temporal relation class: {label!r}") from None


@dataclass(frozen=True)
class Interval:
    """A validity interval ``[start, end]`` at yearly resolution.

    ``start`` is an int year or ``None`` when unknown.  ``end`` is an int
    year, ``None`` when unknown, or ``PRESENT`` for facts that still hold.
    A timestamp is an interval with ``start == end``.
    """

    start: int | None
    end: int | None | str

    def __post_init__(self):
        if self.end is not None and self.end != PRESENT and self.start is not None:
            if self.end < self.start:
                raise ValueError(f"interval end {self.end} precedes start {self.start}")

    @property
    def resolved(self) -> bool:
        return (
            self.start is not None
            and self.end is not None
            and self.end != PRESENT
        )

    def as_floats(self) -> tuple[float, float]:
        """Packed representation: NaN for unknown, +inf for present."""
        s = _UNKNOWN_F if self.start is None else float(self.start)
        if self.end is None:
            e = _UNKNOWN_F
        elif self.end == PRESENT:
            e = _PRESENT_F
        else:
            e = float(self.end)
        return s, e

    @classmethod
    def from_floats(cls, start: float, end: float) -> "Interval":
        s = None if math.isnan(start) else int(start)
        if math.isnan(end):
            e: int | None | str = None
        elif math.isinf(end):
            e = PRESENT
        else:
            e = int(end)
        return cls(s, e)

    @classmethod
    def point(cls, year: int) -> "Interval":
        return cls(year, year)

    def __str__(self) -> str:
        s = "?" if self.start is None else str(self.start)
        e = "?" if self.end is None else str(self.end)
        return f"[{s}, {e}]"


def temporal_relation(first: Interval, second: Interval) -> TRClass:
    """Classify the temporal relation between two resolved intervals.

    ``BEFORE`` iff the first interval ends strictly before the second
    starts, ``AFTER`` iff it starts strictly after the second ends, and
    ``TOUCHING`` otherwise (any overlap, containment, or shared endpoint).

    Raises ContractViolation when either interval has an unresolved
    endpoint; callers must impute or resolve first.
    """
    if not first.resolved or not second.resolved:
        raise ContractViolation(
            f"temporal_relation requires resolved intervals, got {first} vs {second}"
        )
    if first.end < second.start:
        return TRClass.BEFORE
    if first.start > second.end:
        return TRClass.AFTER
    return TRClass.TOUCHING


def classify_many(
    starts: np.ndarray,
    ends: np.ndarray,
    other_start: float,
    other_end: float,
) -> np.ndarray:
    """Vectorized ``temporal_relation`` of many intervals against one.

    All inputs must already be resolved (finite).  Returns an int8 array of
    TRClass values.
    """
    starts = np.asarray(starts, dtype=np.float64)
    ends = np.asarray(ends, dtype=np.float64)
    bad = ~(np.isfinite(starts) & np.isfinite(ends))
    if bad.any() or not (np.isfinite(other_start) and np.isfinite(other_end)):
        raise ContractViolation("classify_many requires resolved (finite) intervals")
    out = np.full(starts.shape, TRClass.TOUCHING, dtype=np.int8)
    out[ends < other_start] = TRClass.BEFORE
    out[starts > other_end] = TRClass.AFTER
    return out
