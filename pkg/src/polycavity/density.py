"""Histogram densities on an interval.

Every message and cavity marginal of the message-passing engine is an
:class:`EmpiricalDensity`: ``bins`` equal-width cells over ``support`` with a
normalized mass vector. Inside a cell the law is uniform, so the CDF is
piecewise linear and truncated sampling is an exact inverse-CDF draw.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from polycavity.intervals import EMPTY, Interval

DEFAULT_BINS = 100
NORM_TOL = 1e-9


class WeightedSample(NamedTuple):
    value: float
    weight: float


@dataclass(frozen=True, eq=False)
class EmpiricalDensity:
    support: Interval
    mass: np.ndarray
    null: bool = False
    dropped: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.support.is_empty or not self.support.lo < self.support.hi:
            raise ValueError(f"degenerate support {self.support!r}")
        m = np.array(self.mass, dtype=float)
        if m.ndim != 1 or m.size < 2:
            raise ValueError("a density needs at least 2 bins")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValueError("masses must be finite and nonnegative")
        m.setflags(write=False)
        object.__setattr__(self, "mass", m)

    @property
    def bins(self) -> int:
        return self.mass.size

    @cached_property
    def edges(self) -> np.ndarray:
        e = np.linspace(self.support.lo, self.support.hi, self.bins + 1)
        e.setflags(write=False)
        return e

    @property
    def width(self) -> float:
        return (self.support.hi - self.support.lo) / self.bins

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @cached_property
    def cdf(self) -> np.ndarray:
        c = np.concatenate(([0.0], np.cumsum(self.mass)))
        c.setflags(write=False)
        return c

    def pdf(self) -> np.ndarray:
        return self.mass / self.width

    def mean(self) -> float:
        return float(np.dot(self.mass, self.centers))

    def same_grid(self, other: EmpiricalDensity) -> bool:
        return self.bins == other.bins and self.support == other.support

    def cdf_at(self, x) -> np.ndarray:
        """Cumulative mass up to ``x`` (vectorized), clamped to the support."""
        return np.interp(x, self.edges, self.cdf)

    def __repr__(self) -> str:
        tag = ", null" if self.null else ""
        return f"EmpiricalDensity({self.support!r}, bins={self.bins}{tag})"


def _check_bins(bins: int) -> int:
    if int(bins) != bins or bins < 2:
        raise ValueError(f"bins must be an integer >= 2, got {bins}")
    return int(bins)


def new_uniform(support: Interval, bins: int = DEFAULT_BINS) -> EmpiricalDensity:
    bins = _check_bins(bins)
    return EmpiricalDensity(support, np.full(bins, 1.0 / bins))


def null_like(d: EmpiricalDensity, dropped: int = 0) -> EmpiricalDensity:
    return EmpiricalDensity(d.support, np.zeros(d.bins), null=True, dropped=dropped)


def _normalized(support: Interval, raw: np.ndarray, dropped: int = 0) -> EmpiricalDensity:
    total = raw.sum()
    if not total > 0:
        return EmpiricalDensity(support, np.zeros(raw.size), null=True, dropped=dropped)
    return EmpiricalDensity(support, raw / total, dropped=dropped)


def histogram(support: Interval, bins: int, values, weights=None) -> EmpiricalDensity:
    """Normalized weighted histogram; values outside ``support`` are dropped and counted."""
    values = np.asarray(values, dtype=float)
    weights = np.ones_like(values) if weights is None else np.asarray(weights, dtype=float)
    inside = (values >= support.lo) & (values <= support.hi)
    dropped = int(values.size - np.count_nonzero(inside))
    v, w = values[inside], weights[inside]
    idx = np.floor((v - support.lo) / (support.hi - support.lo) * bins).astype(np.int64)
    np.clip(idx, 0, bins - 1, out=idx)
    raw = np.bincount(idx, weights=w, minlength=bins).astype(float)
    return _normalized(support, raw, dropped)


def deposit_uniforms(support: Interval, bins: int, lo, hi, weights) -> EmpiricalDensity:
    """Normalized histogram of the mixture ``sum_a w_a * Uniform[lo_a, hi_a]``.

    Zero-length segments deposit their weight as a point mass. The grid CDF is
    a sum of clipped ramps, evaluated for all edges at once from sorted
    cumulative sums; mass outside ``support`` is discarded.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    w = np.asarray(weights, dtype=float)
    edges = np.linspace(support.lo, support.hi, bins + 1)
    length = hi - lo
    flat = length > 0
    cdf = np.zeros(bins + 1)
    if flat.any():
        rate = w[flat] / length[flat]
        cdf += _ramp_sum(edges, lo[flat], rate) - _ramp_sum(edges, hi[flat], rate)
    if (~flat).any():
        pts = lo[~flat]
        order = np.argsort(pts)
        cum = np.concatenate(([0.0], np.cumsum(w[~flat][order])))
        cdf += cum[np.searchsorted(pts[order], edges, side="right")]
    raw = np.clip(np.diff(cdf), 0.0, None)
    return _normalized(support, raw)


def _ramp_sum(edges: np.ndarray, starts: np.ndarray, rate: np.ndarray) -> np.ndarray:
    """``sum_a rate_a * max(0, e - start_a)`` at every edge ``e``."""
    order = np.argsort(starts)
    s, r = starts[order], rate[order]
    cr = np.concatenate(([0.0], np.cumsum(r)))
    crs = np.concatenate(([0.0], np.cumsum(r * s)))
    k = np.searchsorted(s, edges, side="right")
    return edges * cr[k] - crs[k]


def accumulate(d: EmpiricalDensity, samples: Iterable[WeightedSample]) -> EmpiricalDensity:
    """Weighted histogram of ``samples`` on the grid of ``d``.

    A zero total weight yields a null-flagged density; ``result.dropped`` counts
    samples that fell outside the support.
    """
    samples = list(samples)
    values = np.array([s.value for s in samples], dtype=float)
    weights = np.array([s.weight for s in samples], dtype=float)
    if np.any(weights < 0):
        raise ValueError("sample weights must be nonnegative")
    return histogram(d.support, d.bins, values, weights)


def mass_in(d: EmpiricalDensity, r: Interval) -> float:
    if r.is_empty or d.null:
        return 0.0
    lo, hi = d.cdf_at([r.lo, r.hi])
    return float(min(1.0, max(0.0, hi - lo)))


def sample_between(d: EmpiricalDensity, lo: np.ndarray, hi: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draws from ``d`` truncated to ``[lo, hi]``, driven by uniforms ``u``.

    Callers must ensure every row has positive truncated mass. Results are
    clipped into ``[lo, hi]`` and the support to absorb rounding.
    """
    lo = np.maximum(lo, d.support.lo)
    hi = np.minimum(hi, d.support.hi)
    c_lo = d.cdf_at(lo)
    c_hi = d.cdf_at(hi)
    target = c_lo + u * (c_hi - c_lo)
    cdf = d.cdf
    k = np.searchsorted(cdf, target, side="right") - 1
    np.clip(k, 0, d.bins - 1, out=k)
    m = d.mass[k]
    # target can land on a zero-mass plateau only through rounding at c_hi
    frac = np.divide(target - cdf[k], m, out=np.zeros_like(target), where=m > 0)
    x = d.edges[k] + np.clip(frac, 0.0, 1.0) * d.width
    return np.minimum(np.maximum(x, lo), hi)


def sample_truncated(d: EmpiricalDensity, r: Interval, rng: np.random.Generator) -> float:
    if mass_in(d, r) <= 0.0:
        raise ValueError(f"no mass of {d!r} inside {r!r}")
    x = sample_between(d, np.array([r.lo]), np.array([r.hi]), rng.random(1))
    return float(x[0])


def product(ds: Sequence[EmpiricalDensity]) -> EmpiricalDensity:
    """Bin-wise product, renormalized; all inputs must share one grid."""
    if not ds:
        raise ValueError("product of an empty list")
    first = ds[0]
    if len(ds) == 1:
        return first
    raw = np.array(first.mass, dtype=float)
    for d in ds[1:]:
        if not d.same_grid(first):
            raise ValueError("product needs densities on an identical grid")
        raw = raw * d.mass
    return _normalized(first.support, raw)


def mix(old: EmpiricalDensity, new: EmpiricalDensity, damping: float) -> EmpiricalDensity:
    """``damping * old + (1 - damping) * new`` on a shared grid."""
    if damping == 0.0 or old.null:
        return new
    if new.null:
        return old
    return _normalized(new.support, damping * old.mass + (1.0 - damping) * new.mass)


def _overlap_matrix(src_edges: np.ndarray, dst_edges: np.ndarray) -> np.ndarray:
    """Fraction of each source cell lying in each destination cell."""
    lo = np.maximum(src_edges[:-1, None], dst_edges[None, :-1])
    hi = np.minimum(src_edges[1:, None], dst_edges[None, 1:])
    width = np.diff(src_edges)[:, None]
    return np.clip(hi - lo, 0.0, None) / width


def resample_to_grid(d: EmpiricalDensity, support: Interval, bins: int) -> tuple[EmpiricalDensity, float]:
    """Move ``d`` onto a new grid by proportional overlap.

    Returns the renormalized density and the mass of ``d`` that fell outside
    ``support``.
    """
    bins = _check_bins(bins)
    dst = np.linspace(support.lo, support.hi, bins + 1)
    raw = d.mass @ _overlap_matrix(d.edges, dst)
    outside = float(max(0.0, d.mass.sum() - raw.sum()))
    if d.null:
        return EmpiricalDensity(support, np.zeros(bins), null=True), 0.0
    return _normalized(support, raw), outside


def _union_masses(d: EmpiricalDensity, edges: np.ndarray) -> np.ndarray:
    # cells of the union grid nest inside exactly one source cell (or none)
    return np.diff(d.cdf_at(edges))


def tv_distance(d1: EmpiricalDensity, d2: EmpiricalDensity) -> float:
    """Total variation distance, computed on the union of both bin grids."""
    if d1.null or d2.null:
        raise ValueError("total variation with a null density is undefined")
    if d1.same_grid(d2):
        return float(0.5 * np.abs(d1.mass - d2.mass).sum())
    edges = np.union1d(d1.edges, d2.edges)
    diff = _union_masses(d1, edges) - _union_masses(d2, edges)
    return float(min(1.0, 0.5 * np.abs(diff).sum()))


def interval_uniform_on(grid: EmpiricalDensity, r: Interval) -> EmpiricalDensity:
    """Uniform law on ``r`` expressed on ``grid``'s bins (null if ``r`` misses the grid)."""
    if r.is_empty:
        return null_like(grid)
    lo = np.maximum(grid.edges[:-1], r.lo)
    hi = np.minimum(grid.edges[1:], r.hi)
    raw = np.clip(hi - lo, 0.0, None)
    if not raw.sum() > 0 and r.width == 0 and grid.support.contains(r.lo):
        k = min(int((r.lo - grid.support.lo) / grid.width), grid.bins - 1)
        raw[k] = 1.0
    return _normalized(grid.support, raw)


# --- CSV ---------------------------------------------------------------------

CSV_HEADER = ("series_id", "bin_lo", "bin_hi", "mass")


def write_densities_csv(path, densities: dict) -> None:
    """Write ``{series_id: density}`` as rows ``series_id,bin_lo,bin_hi,mass``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for sid, d in densities.items():
            for lo, hi, m in zip(d.edges[:-1], d.edges[1:], d.mass):
                w.writerow((sid, repr(float(lo)), repr(float(hi)), repr(float(m))))


def read_densities_csv(path) -> dict:
    """Inverse of :func:`write_densities_csv`; series ids are returned as strings."""
    rows: dict[str, list] = {}
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if tuple(header or ()) != CSV_HEADER:
            raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}")
        for row in r:
            sid, lo, hi, m = row
            rows.setdefault(sid, []).append((float(lo), float(hi), float(m)))
    out = {}
    for sid, cells in rows.items():
        lo = cells[0][0]
        hi = cells[-1][1]
        mass = np.array([c[2] for c in cells])
        total = mass.sum()
        out[sid] = EmpiricalDensity(Interval(lo, hi), mass / total if total > 0 else mass, null=not total > 0)
    return out


def densities_by_index(ds: Sequence[Optional[EmpiricalDensity]]) -> dict:
    return {i: d for i, d in enumerate(ds) if d is not None}


__all__ = [
    "DEFAULT_BINS",
    "EMPTY",
    "EmpiricalDensity",
    "WeightedSample",
    "accumulate",
    "deposit_uniforms",
    "histogram",
    "interval_uniform_on",
    "mass_in",
    "mix",
    "new_uniform",
    "product",
    "resample_to_grid",
    "sample_between",
    "sample_truncated",
    "tv_distance",
]
