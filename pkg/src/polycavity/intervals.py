"""Closed real intervals with an explicit empty sentinel."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class Interval:
    """Closed interval ``[lo, hi]``.

    ``EMPTY`` is the only instance allowed to have ``lo > hi``; it is stored as
    ``[+inf, -inf]`` so that min/max reductions treat it as the identity for
    hulls and the absorbing element for intersections.
    """

    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if lo == math.inf and hi == -math.inf:
            return
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ValueError(f"interval endpoints must be finite, got [{lo}, {hi}]")
        if lo > hi:
            raise ValueError(f"interval with lo > hi: [{lo}, {hi}]")

    @property
    def is_empty(self) -> bool:
        return self.lo > self.hi

    @property
    def width(self) -> float:
        return 0.0 if self.is_empty else self.hi - self.lo

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return (not self.is_empty) and self.lo - tol <= x <= self.hi + tol

    def intersect(self, other: Interval) -> Interval:
        lo, hi = max(self.lo, other.lo), min(self.hi, other.hi)
        return Interval(lo, hi) if lo <= hi else EMPTY

    def issubset(self, other: Interval) -> bool:
        if self.is_empty:
            return True
        return (not other.is_empty) and other.lo <= self.lo and self.hi <= other.hi

    def scale(self, c: float) -> Interval:
        if self.is_empty:
            return EMPTY
        a, b = c * self.lo, c * self.hi
        return Interval(min(a, b), max(a, b))

    def __add__(self, other: Interval) -> Interval:
        if self.is_empty or other.is_empty:
            return EMPTY
        return Interval(self.lo + other.lo, self.hi + other.hi)

    def __repr__(self) -> str:
        return "EMPTY" if self.is_empty else f"[{self.lo!r}, {self.hi!r}]"


EMPTY = Interval(math.inf, -math.inf)


def from_bounds(lo: float, hi: float) -> Interval:
    """Interval ``[lo, hi]``, or ``EMPTY`` when ``lo > hi``."""
    return Interval(lo, hi) if lo <= hi else EMPTY
