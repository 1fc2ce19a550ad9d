"""Hit-and-Run sampling of the uniform law on a polytope intersected with its box."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numba
import numpy as np

from polycavity import density as dn
from polycavity.intervals import Interval
from polycavity.model import Instance, residual
from polycavity.support import run_support_bp

CHORD_MIN_WIDTH = 1e-12
MAX_RETRIES = 100
SPREAD_FLAG = 0.05
SUPPORT_TOL = 1e-9


@dataclass(frozen=True)
class HarConfig:
    n_samples: int = 100_000
    burn_in: int = 10_000
    thin: int = 10
    chains: int = 4
    seed: int = 0
    bins: int = dn.DEFAULT_BINS

    def __post_init__(self):
        if self.n_samples < 1 or self.chains < 1 or self.thin < 1 or self.burn_in < 0:
            raise ValueError("n_samples, chains, thin must be >= 1 and burn_in >= 0")


@dataclass
class ChainState:
    x: np.ndarray
    steps: int = 0
    retries: int = 0


def _is_strictly_feasible(instance: Instance, x: np.ndarray) -> bool:
    return bool(np.all(residual(instance, x) >= 0) and np.all(x > instance.lower) and np.all(x < instance.upper))


def _chord_bounds(xi, r, lower, upper, x, u) -> tuple[float, float]:
    with np.errstate(divide="ignore", invalid="ignore"):
        t_a = (lower - x) / u
        t_b = (upper - x) / u
        pos, neg = u > 0, u < 0
        t_lo = max(np.max(t_a[pos], initial=-np.inf), np.max(t_b[neg], initial=-np.inf))
        t_hi = min(np.min(t_b[pos], initial=np.inf), np.min(t_a[neg], initial=np.inf))
        if xi.shape[0]:
            d = xi @ u
            t = -r / d
            t_lo = max(t_lo, np.max(t[d > 0], initial=-np.inf))
            t_hi = min(t_hi, np.min(t[d < 0], initial=np.inf))
    return float(t_lo), float(t_hi)


def chord(instance: Instance, x: Sequence[float], u: Sequence[float]) -> Interval:
    """All ``t`` with ``x + t u`` in the polytope; ``x`` must be strictly feasible."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if not _is_strictly_feasible(instance, x):
        raise ValueError("chord needs a strictly feasible point")
    r = residual(instance, x)
    t_lo, t_hi = _chord_bounds(instance.xi_dense, r, instance.lower, instance.upper, x, u)
    return Interval(t_lo, t_hi)


def step(instance: Instance, state: ChainState, rng: np.random.Generator) -> ChainState:
    """One Hit-and-Run move: random direction, uniform point on the feasible chord."""
    xi, gamma = instance.xi_dense, instance.gamma_array
    lower, upper = instance.lower, instance.upper
    x = state.x
    r = xi @ x - gamma
    retries = 0
    for _ in range(MAX_RETRIES):
        u = rng.standard_normal(x.size)
        u /= np.linalg.norm(u)
        t_lo, t_hi = _chord_bounds(xi, r, lower, upper, x, u)
        if t_hi - t_lo < CHORD_MIN_WIDTH:
            retries += 1
            continue
        for _ in range(MAX_RETRIES):
            y = x + rng.uniform(t_lo, t_hi) * u
            # rounding can put y a hair outside when t lands on an endpoint
            if np.all(y > lower) and np.all(y < upper) and np.all(xi @ y - gamma >= 0):
                return ChainState(y, state.steps + 1, state.retries + retries)
            retries += 1
        raise RuntimeError("could not place a point strictly inside the chord")
    raise RuntimeError(f"no usable chord after {MAX_RETRIES} directions")


@dataclass
class HarResult:
    marginals: list[dn.EmpiricalDensity]
    diagnostics: dict
    samples: Optional[np.ndarray] = None


@numba.njit(cache=True)
def _advance(x, xi, gamma, lower, upper, dirs, ts, out, done, burn_in, thin):
    """Run pre-drawn steps in place; returns how many completed.

    Stops early (returning fewer than ``len(ts)``) when a step would need a
    retry, which the caller then performs with :func:`step`.
    """
    n, m = x.size, gamma.size
    y = np.empty(n)
    for s in range(ts.size):
        u = dirs[s]
        norm = 0.0
        for k in range(n):
            norm += u[k] * u[k]
        norm = np.sqrt(norm)
        t_lo, t_hi = -np.inf, np.inf
        for k in range(n):
            uk = u[k] / norm
            if uk > 0:
                t_lo = max(t_lo, (lower[k] - x[k]) / uk)
                t_hi = min(t_hi, (upper[k] - x[k]) / uk)
            elif uk < 0:
                t_lo = max(t_lo, (upper[k] - x[k]) / uk)
                t_hi = min(t_hi, (lower[k] - x[k]) / uk)
        for mu in range(m):
            r = -gamma[mu]
            d = 0.0
            for k in range(n):
                r += xi[mu, k] * x[k]
                d += xi[mu, k] * u[k] / norm
            if d > 0:
                t_lo = max(t_lo, -r / d)
            elif d < 0:
                t_hi = min(t_hi, -r / d)
        if t_hi - t_lo < CHORD_MIN_WIDTH:
            return s
        t = t_lo + ts[s] * (t_hi - t_lo)
        for k in range(n):
            y[k] = x[k] + t * u[k] / norm
            if not (lower[k] < y[k] < upper[k]):
                return s
        for mu in range(m):
            r = -gamma[mu]
            for k in range(n):
                r += xi[mu, k] * y[k]
            if r < 0:
                return s
        x[:] = y
        count = done + s + 1 - burn_in
        if count > 0 and count % thin == 0:
            out[count // thin - 1] = x
    return ts.size


def run_chain(instance: Instance, start, n_keep: int, burn_in: int, thin: int, rng, block: int = 4096):
    """Kept states of one chain plus (retries, infeasible kept iterates).

    Randomness comes from ``rng`` in blocks of ``block`` steps; a step that
    needs a retry falls back to :func:`step`.
    """
    xi = np.ascontiguousarray(instance.xi_dense, dtype=float)
    gamma = np.ascontiguousarray(instance.gamma_array, dtype=float)
    lower, upper = instance.lower, instance.upper
    x = np.array(start, dtype=float)
    out = np.empty((n_keep, instance.n_vars))
    total = burn_in + n_keep * thin
    done, retries = 0, 0
    while done < total:
        b = min(block, total - done)
        dirs = rng.standard_normal((b, x.size))
        ts = rng.random(b)
        k = _advance(x, xi, gamma, lower, upper, dirs, ts, out, done, burn_in, thin)
        done += k
        if k < b:
            st = step(instance, ChainState(x), rng)
            retries += st.retries + 1
            x = st.x
            done += 1
            count = done - burn_in
            if count > 0 and count % thin == 0:
                out[count // thin - 1] = x
    viol = np.zeros(n_keep, dtype=bool)
    if instance.n_cons:
        viol |= (out @ xi.T - gamma < 0).any(axis=1)
    viol |= ((out <= lower) | (out >= upper)).any(axis=1)
    return out, retries, int(viol.sum())


def sample_marginals(
    instance: Instance,
    cfg: Optional[HarConfig] = None,
    start: Optional[Sequence[float]] = None,
    supports: Optional[Sequence[Interval]] = None,
    keep_samples: bool = False,
) -> HarResult:
    """Per-variable histograms of ``cfg.chains`` independent chains.

    Histograms use the support-propagation intervals as grids (same grids as
    the message-passing marginals) unless ``supports`` is given. Samples
    outside those intervals are counted in the diagnostics.
    """
    cfg = cfg or HarConfig()
    if start is None:
        start = instance.planted_point
    if start is None:
        raise ValueError("Hit-and-Run needs an interior starting point (planted_point or start)")
    start = np.asarray(start, dtype=float)
    if not _is_strictly_feasible(instance, start):
        raise ValueError("starting point is not strictly feasible")
    if supports is None:
        sup = run_support_bp(instance)
        supports = sup.intervals
    grids = [_hist_support(iv, instance.domain(i)) for i, iv in enumerate(supports)]

    per_chain = [cfg.n_samples // cfg.chains + (c < cfg.n_samples % cfg.chains) for c in range(cfg.chains)]
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.chains)
    chains, retries, violations = [], 0, 0
    for c in range(cfg.chains):
        rng = np.random.default_rng(seeds[c])
        xs, ret, viol = run_chain(instance, start, per_chain[c], cfg.burn_in, cfg.thin, rng)
        chains.append(xs)
        retries += ret
        violations += viol
    pooled = np.concatenate(chains)

    marginals, spread = [], []
    outside = 0
    for i, g in enumerate(grids):
        iv = supports[i]
        col = pooled[:, i]
        outside += int(np.count_nonzero((col < iv.lo - SUPPORT_TOL) | (col > iv.hi + SUPPORT_TOL)))
        m = dn.histogram(g, cfg.bins, col)
        marginals.append(m)
        per = [dn.histogram(g, cfg.bins, xs[:, i]) for xs in chains if xs.shape[0]]
        spread.append(max((dn.tv_distance(p, m) for p in per if not p.null), default=0.0))

    diagnostics = {
        "chains": cfg.chains,
        "kept": int(pooled.shape[0]),
        "burn_in": cfg.burn_in,
        "thin": cfg.thin,
        "direction_retries": retries,
        "infeasible_iterates": violations,
        "outside_support": outside,
        "spread": spread,
        "max_spread": max(spread, default=0.0),
        "non_mixing": [i for i, s in enumerate(spread) if s > SPREAD_FLAG],
    }
    return HarResult(marginals, diagnostics, pooled if keep_samples else None)


def _hist_support(iv: Interval, box: Interval) -> Interval:
    if iv.is_empty or iv.width <= 0:
        return box
    return iv
