"""Drivers for domain-scaling and domain-shift experiments and marginal comparison."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from polycavity import density as dn
from polycavity.cavity import MpConfig, run_mp
from polycavity.model import InfeasibleError, Instance
from polycavity.support import run_support_bp

SCALE_HEADER = ("b", "variable", "x_over_b", "f", "status")
SHIFT_HEADER = ("a", "variable", "a_i", "b_i", "empty")
A_STAR_TOL = 1e-5
FINE_STEP = 1e-3
FINE_HALF_WIDTH = 10


def scaled(instance: Instance, b: float) -> Instance:
    return instance.with_domains([(lo * b, hi * b) for lo, hi in instance.domains])


def shifted(instance: Instance, a: float) -> Instance:
    return instance.with_domains([(a, hi) for _, hi in instance.domains])


def scale_experiment(
    instance: Instance,
    b_values: Sequence[float],
    cfg: Optional[MpConfig] = None,
    variables: Optional[Sequence[int]] = None,
) -> tuple[list[tuple], dict]:
    """Marginals on the box scaled by each ``b``, rescaled to ``x/b`` and ``P/max P``.

    Returns long-form rows ``(b, variable, x_over_b, f, status)`` and a per-b
    summary. Infeasible ``b`` values produce one flagged row per variable.
    """
    cfg = cfg or MpConfig()
    variables = range(instance.n_vars) if variables is None else variables
    rows, summary = [], {}
    for b in b_values:
        if not 0 < b <= 1:
            raise ValueError(f"b must lie in (0, 1], got {b}")
        try:
            res = run_mp(scaled(instance, b), cfg)
        except InfeasibleError as exc:
            summary[b] = {"status": "infeasible", "reason": str(exc)}
            rows.extend((b, i, math.nan, math.nan, "infeasible") for i in variables)
            continue
        summary[b] = {"status": "ok", "sweeps": res.report["sweeps"], "converged": res.report["converged"]}
        for i in variables:
            d = res.marginals[i]
            if d.null:
                rows.append((b, i, math.nan, math.nan, "null"))
                continue
            f = d.mass / d.mass.max()
            for x, fx in zip(d.centers / b, f):
                rows.append((b, i, float(x), float(fx), "ok"))
    return rows, summary


def _support_at(instance: Instance, a: float):
    return run_support_bp(shifted(instance, a)).intervals


def locate_meet_point(instance: Instance, var: int, lo: float, hi: float, tol: float = A_STAR_TOL) -> float:
    """Bisect for the smallest ``a`` at which ``var``'s support interval is empty.

    ``lo`` must give a nonempty interval and ``hi`` an empty one.
    """
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _support_at(instance, mid)[var].is_empty:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class ShiftResult:
    rows: list[tuple]
    a_star: Optional[float]
    bracket: Optional[tuple[float, float]]


def shift_experiment(instance: Instance, a_grid: Sequence[float], var: int, refine: bool = True) -> ShiftResult:
    """Support intervals on the box ``[a, hi]^N`` for every ``a`` in ``a_grid``.

    When ``var``'s interval empties inside the grid, the transition ``a_star``
    is bisected to within ``A_STAR_TOL`` and a sub-grid of step ``FINE_STEP``
    around it is added to the output.
    """
    grid = sorted(set(float(a) for a in a_grid))
    for a in grid:
        if not 0 <= a < 1:
            raise ValueError(f"a must lie in [0, 1), got {a}")
    table = {a: _support_at(instance, a) for a in grid}

    a_star = bracket = None
    first_empty = next((k for k, a in enumerate(grid) if table[a][var].is_empty), None)
    if refine and first_empty is not None and first_empty > 0:
        lo, hi = grid[first_empty - 1], grid[first_empty]
        a_star = locate_meet_point(instance, var, lo, hi)
        bracket = (a_star - A_STAR_TOL, a_star)
        fine = a_star + FINE_STEP * np.arange(-FINE_HALF_WIDTH, FINE_HALF_WIDTH + 1)
        for a in fine:
            a = round(float(a), 12)
            if 0 <= a < 1 and a not in table:
                table[a] = _support_at(instance, a)

    rows = []
    for a in sorted(table):
        for i, iv in enumerate(table[a]):
            if iv.is_empty:
                rows.append((a, i, math.nan, math.nan, 1))
            else:
                rows.append((a, i, iv.lo, iv.hi, 0))
    return ShiftResult(rows, a_star, bracket)


def compare_marginals(a: dict, b: dict) -> dict:
    """Per-series total variation between two marginal sets with identical keys."""
    if set(a) != set(b):
        raise ValueError(f"series mismatch: {sorted(set(a) ^ set(b))}")
    keys = sorted(a, key=lambda k: (len(str(k)), str(k)))
    tv = {k: dn.tv_distance(a[k], b[k]) for k in keys}
    vals = list(tv.values())
    return {
        "tv": tv,
        "mean_tv": float(np.mean(vals)) if vals else 0.0,
        "max_tv": float(np.max(vals)) if vals else 0.0,
    }


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_rows(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
