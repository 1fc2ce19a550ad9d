"""Interval message passing for outer bounds on marginal supports.

Each factor ``gamma = sum_j eta_j s_j`` sends to each neighbor ``i`` the
interval ``(gamma - sum_{l != i} eta_l [a_l, b_l]) / eta_i``; variables
intersect everything they receive with their box. Intervals only shrink, so a
round-robin sweep reaches a fixed point. On a tree the result is the exact
projection of the polytope onto each axis; with loops it is an outer bound.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from polycavity.intervals import EMPTY, Interval, from_bounds
from polycavity.model import AugmentedSystem, Instance, build_augmented

MOVE_FLOOR = 1e-12


def _term_range(c: float, lo: float, hi: float) -> tuple[float, float]:
    a, b = c * lo, c * hi
    return (a, b) if a <= b else (b, a)


def _factor_bounds(row, gamma: float, i: int, lo: np.ndarray, hi: np.ndarray) -> tuple[float, float]:
    """Raw bounds on ``s_i`` implied by one factor; ``(inf, -inf)`` if a neighbor is empty."""
    rest_lo = rest_hi = 0.0
    c_i = None
    for j, c in row:
        if j == i:
            c_i = c
            continue
        if lo[j] > hi[j]:
            return np.inf, -np.inf
        a, b = _term_range(c, lo[j], hi[j])
        rest_lo += a
        rest_hi += b
    # eta_i s_i = gamma - rest
    a, b = (gamma - rest_hi) / c_i, (gamma - rest_lo) / c_i
    return (a, b) if a <= b else (b, a)


def factor_support(
    sys: AugmentedSystem,
    mu: int,
    i: int,
    neighbors: Mapping[int, Interval],
    current: Optional[Interval] = None,
) -> Interval:
    """Range of ``s_i`` allowed by factor ``mu`` given intervals for its other neighbors.

    The result is intersected with ``current`` (default: the domain of ``i``).
    """
    if i not in sys.cons_adj[mu]:
        raise ValueError(f"variable {i} is not adjacent to factor {mu}")
    n = sys.n_total
    lo = np.full(n, np.nan)
    hi = np.full(n, np.nan)
    for j in sys.cons_adj[mu]:
        if j == i:
            continue
        iv = neighbors[j]
        lo[j], hi[j] = iv.lo, iv.hi
    a, b = _factor_bounds(sys.eta[mu], sys.gamma[mu], i, lo, hi)
    cur = sys.var_domains[i] if current is None else current
    if cur.is_empty:
        return EMPTY
    return from_bounds(max(a, cur.lo), min(b, cur.hi))


@dataclass(frozen=True)
class SupportResult:
    intervals: tuple[Interval, ...]
    slack_intervals: tuple[Interval, ...]
    feasible: bool
    sweeps: int
    msg_iv: dict

    def as_rows(self):
        for i, iv in enumerate(self.intervals):
            yield i, iv


def run_support_bp(
    problem: Union[Instance, AugmentedSystem],
    max_sweeps: Optional[int] = None,
) -> SupportResult:
    """Propagate interval bounds to a fixed point.

    Updates tighter than ``MOVE_FLOOR`` are ignored, so the fixed point is
    reached after finitely many sweeps; the sweep count is also capped at
    ``10 * (N + M)``.
    """
    sys = build_augmented(problem, strict=False) if isinstance(problem, Instance) else problem
    n_total = sys.n_total
    lo = np.array([d.lo for d in sys.var_domains], dtype=float)
    hi = np.array([d.hi for d in sys.var_domains], dtype=float)
    msg_iv: dict[tuple[int, int], Interval] = {}
    cap = 10 * n_total if max_sweeps is None else max_sweeps

    sweeps = 0
    changed = sys.n_cons > 0
    while changed and sweeps < cap:
        changed = False
        sweeps += 1
        for mu, row in enumerate(sys.eta):
            for i, _ in row:
                a, b = _factor_bounds(row, sys.gamma[mu], i, lo, hi)
                msg_iv[(mu, i)] = from_bounds(a, b)
                if lo[i] > hi[i]:
                    continue
                new_lo = a if a > lo[i] + MOVE_FLOOR else lo[i]
                new_hi = b if b < hi[i] - MOVE_FLOOR else hi[i]
                if new_lo > new_hi or a > hi[i] or b < lo[i]:
                    lo[i], hi[i] = np.inf, -np.inf
                    changed = True
                elif new_lo != lo[i] or new_hi != hi[i]:
                    lo[i], hi[i] = new_lo, new_hi
                    changed = True

    ivs = tuple(from_bounds(lo[j], hi[j]) for j in range(n_total))
    feasible = not any(iv.is_empty for iv in ivs)
    return SupportResult(
        intervals=ivs[: sys.n_vars],
        slack_intervals=ivs[sys.n_vars:],
        feasible=feasible,
        sweeps=sweeps,
        msg_iv=msg_iv,
    )


SUPPORT_CSV_HEADER = ("variable", "a", "b", "empty")


def write_support_csv(path, intervals: Sequence[Interval]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUPPORT_CSV_HEADER)
        for i, iv in enumerate(intervals):
            if iv.is_empty:
                w.writerow((i, "nan", "nan", 1))
            else:
                w.writerow((i, repr(iv.lo), repr(iv.hi), 0))
