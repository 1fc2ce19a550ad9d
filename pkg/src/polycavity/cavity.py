"""Weighted message passing on histogram densities.

For a factor ``gamma = sum_j eta_j s_j`` and a target variable ``i``, the
message ``m_{mu->i}`` is the law of ``s_i = (gamma - sum_{l != i} eta_l s_l) / eta_i``
when the other neighbors follow their cavity laws, conditioned on every value
being inside its domain. It is estimated by sequential importance sampling:
neighbor ``l_j`` is drawn from its cavity law truncated to the acceptance
interval (the values that still admit an in-domain completion of the
equality), and each pass carries the product of the truncated masses as its
weight. Cavity laws are bin-wise products of the other incoming messages.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy.stats import qmc

from polycavity import density as dn
from polycavity.density import EmpiricalDensity
from polycavity.intervals import EMPTY, Interval, from_bounds
from polycavity.model import AugmentedSystem, InfeasibleError, Instance, build_augmented
from polycavity.support import factor_support, run_support_bp

logger = logging.getLogger(__name__)

MIN_GRID_WIDTH = 1e-9
NULL_FALLBACK_AFTER = 3


class NeighborOrder(str, Enum):
    INDEX_ASCENDING_SLACK_LAST = "index_ascending_slack_last"
    RANDOM_PER_DRAW = "random_per_draw"


class Sampling(str, Enum):
    SOBOL = "sobol"
    STRATIFIED = "stratified"
    IID = "iid"


@dataclass(frozen=True)
class MpConfig:
    bins: int = dn.DEFAULT_BINS
    samples_per_update: int = 10_000
    max_sweeps: int = 200
    tol: float = 1e-3
    damping: float = 0.0
    seed: int = 0
    neighbor_order: NeighborOrder = NeighborOrder.INDEX_ASCENDING_SLACK_LAST
    sampling: Sampling = Sampling.SOBOL

    def __post_init__(self):
        object.__setattr__(self, "neighbor_order", NeighborOrder(self.neighbor_order))
        object.__setattr__(self, "sampling", Sampling(self.sampling))
        if self.samples_per_update < 1:
            raise ValueError("samples_per_update must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")
        if self.max_sweeps < 0:
            raise ValueError("max_sweeps must be >= 0")


@dataclass
class MessageState:
    """Current messages ``msg[(mu, i)]`` and cavity laws ``cav[(i, mu)]``.

    ``priors[j]`` is the uniform law on the grid of variable ``j`` (original
    or slack); slack variables never get a cavity entry and always use it.
    """

    priors: list[EmpiricalDensity]
    msg: dict
    cav: dict
    sweep_count: int = 0
    last_delta: float = math.inf
    rejection_stats: dict = field(default_factory=dict)
    null_streak: dict = field(default_factory=dict)
    null_incidents: int = 0

    def cavity_law(self, sys: AugmentedSystem, j: int, mu: int) -> EmpiricalDensity:
        if sys.is_slack(j):
            return self.priors[j]
        return self.cav[(j, mu)]


def _grid_interval(iv: Interval) -> Interval:
    if iv.width >= MIN_GRID_WIDTH * max(1.0, abs(iv.lo)):
        return iv
    c = 0.5 * (iv.lo + iv.hi)
    half = 0.5 * MIN_GRID_WIDTH * max(1.0, abs(c))
    return Interval(c - half, c + half)


def init_state(sys: AugmentedSystem, supports: Sequence[Interval], cfg: MpConfig) -> MessageState:
    """Uniform messages and cavity laws over ``supports`` (one per augmented variable)."""
    priors = [dn.new_uniform(_grid_interval(iv), cfg.bins) for iv in supports]
    msg, cav = {}, {}
    for mu, i in sys.x_edges():
        msg[(mu, i)] = priors[i]
        cav[(i, mu)] = priors[i]
    stats = {e: [0, 0] for e in msg}
    return MessageState(priors=priors, msg=msg, cav=cav, rejection_stats=stats)


# --- acceptance regions ----------------------------------------------------------


def _remaining_range(sys: AugmentedSystem, mu: int, vars_left: Sequence[int], domains) -> tuple[float, float]:
    lo = hi = 0.0
    for j in vars_left:
        c = sys.coef(mu, j)
        d = domains[j]
        a, b = c * d.lo, c * d.hi
        lo += min(a, b)
        hi += max(a, b)
    return lo, hi


def acceptance_interval(
    sys: AugmentedSystem,
    mu: int,
    target: int,
    order: Sequence[int],
    partial: Sequence[float],
    domains: Optional[Sequence[Interval]] = None,
) -> Optional[Interval]:
    """Values of the next unassigned neighbor that still admit a completion.

    ``order`` lists ``mu``'s neighbors other than ``target`` in sampling order
    and ``partial`` the values already assigned to a prefix of it. Returns
    ``None`` once every neighbor is assigned, ``EMPTY`` if no completion exists.
    """
    if target not in sys.cons_adj[mu]:
        raise ValueError(f"variable {target} is not adjacent to factor {mu}")
    if sorted(order) != sorted(j for j in sys.cons_adj[mu] if j != target):
        raise ValueError("order must list every other neighbor of the factor exactly once")
    k = len(partial)
    if k > len(order):
        raise ValueError("more assigned values than neighbors")
    if k == len(order):
        return None
    domains = sys.var_domains if domains is None else domains
    r = sys.gamma[mu] - sum(sys.coef(mu, j) * v for j, v in zip(order, partial))
    nxt = order[k]
    lo_rest, hi_rest = _remaining_range(sys, mu, [target, *order[k + 1:]], domains)
    a, b = _solve_region(r, sys.coef(mu, nxt), lo_rest, hi_rest)
    d = domains[nxt]
    if d.is_empty:
        return EMPTY
    return from_bounds(max(a, d.lo), min(b, d.hi))


def _solve_region(r, c, lo_rest, hi_rest):
    # need r - c v in [lo_rest, hi_rest]
    a = (r - hi_rest) / c
    b = (r - lo_rest) / c
    if c < 0:
        a, b = b, a
    return a, b


# --- message update -------------------------------------------------------------


def default_order(sys: AugmentedSystem, mu: int, i: int) -> list[int]:
    """Other neighbors in ascending index; the slack has the largest index so comes last."""
    return sorted(j for j in sys.cons_adj[mu] if j != i)


def _uniforms(n: int, k: int, cfg: MpConfig, rng: np.random.Generator) -> np.ndarray:
    if k == 0:
        return np.empty((n, 0))
    if cfg.sampling is Sampling.IID:
        return rng.random((n, k))
    if cfg.sampling is Sampling.SOBOL:
        m = max(0, math.ceil(math.log2(n)))
        return qmc.Sobol(d=k, scramble=True, seed=rng).random_base2(m)[:n]
    # Latin hypercube: every coordinate is stratified into n equal cells
    u = np.empty((n, k))
    for j in range(k):
        u[:, j] = (rng.permutation(n) + rng.random(n)) / n
    return u


def _n_drawn(sys: AugmentedSystem, order: Sequence[int]) -> int:
    """Neighbors that are sampled; a trailing slack is integrated out exactly."""
    return len(order) - 1 if order and sys.is_slack(order[-1]) else len(order)


def _weighted_pass(
    sys: AugmentedSystem,
    mu: int,
    i: int,
    order: Sequence[int],
    laws: Sequence[EmpiricalDensity],
    target_support: Interval,
    u: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized sequential draws for every pass.

    Returns ``(lo, hi, weight)``: each pass contributes ``weight`` spread
    uniformly over ``[lo, hi]`` of the target. If the last neighbor is a slack
    (uniform law), its truncated draw is replaced by the exact image segment of
    the acceptance interval; otherwise ``lo == hi`` is the assigned value.
    """
    n = u.shape[0]
    supports = {j: law.support for j, law in zip(order, laws)}
    supports[i] = target_support
    c_i = sys.coef(mu, i)
    r = np.full(n, sys.gamma[mu])
    w = np.ones(n)
    drawn = _n_drawn(sys, order)
    for step, (j, law) in enumerate(zip(order, laws)):
        c = sys.coef(mu, j)
        lo_rest, hi_rest = _remaining_range(sys, mu, [i, *order[step + 1:]], supports)
        a, b = _solve_region(r, c, lo_rest, hi_rest)
        a = np.maximum(a, law.support.lo)
        b = np.minimum(b, law.support.hi)
        omega = np.where(a <= b, law.cdf_at(b) - law.cdf_at(a), 0.0)
        w *= np.clip(omega, 0.0, 1.0)
        if step == drawn:
            # uniform last neighbor: s_i sweeps an affine image of [a, b]
            e1, e2 = (r - c * a) / c_i, (r - c * b) / c_i
            return np.minimum(e1, e2), np.maximum(e1, e2), w
        alive = w > 0
        v = np.zeros(n)
        if alive.any():
            v[alive] = dn.sample_between(law, a[alive], b[alive], u[alive, step])
        r -= c * v
    s_i = r / c_i
    return s_i, s_i, w


def update_message(
    sys: AugmentedSystem,
    mu: int,
    i: int,
    state: MessageState,
    cfg: MpConfig,
    rng: np.random.Generator,
) -> EmpiricalDensity:
    """Re-estimate ``m_{mu->i}`` from the current cavity laws of ``mu``'s other neighbors.

    Zero-weight passes are added to ``state.rejection_stats[(mu, i)]``. If every
    pass has zero weight the returned density is null-flagged.
    """
    grid = state.priors[i]
    n = cfg.samples_per_update
    base = default_order(sys, mu, i)
    k = len(base)

    if cfg.neighbor_order is NeighborOrder.RANDOM_PER_DRAW and k > 1:
        u = _uniforms(n, k, cfg, rng)
        perms = np.argsort(rng.random((n, k)), axis=1)
        groups, inverse = np.unique(perms, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        lo, hi, w = np.empty(n), np.empty(n), np.empty(n)
        for g, perm in enumerate(groups):
            rows = np.flatnonzero(inverse == g)
            order = [base[p] for p in perm]
            laws = [state.cavity_law(sys, j, mu) for j in order]
            lo[rows], hi[rows], w[rows] = _weighted_pass(sys, mu, i, order, laws, grid.support, u[rows])
    else:
        u = _uniforms(n, _n_drawn(sys, base), cfg, rng)
        laws = [state.cavity_law(sys, j, mu) for j in base]
        lo, hi, w = _weighted_pass(sys, mu, i, base, laws, grid.support, u)

    alive = w > 0
    stats = state.rejection_stats.setdefault((mu, i), [0, 0])
    stats[0] += int(n - np.count_nonzero(alive))
    stats[1] += n
    # images lie inside the support up to rounding of the affine solve
    lo = np.clip(lo[alive], grid.support.lo, grid.support.hi)
    hi = np.clip(hi[alive], grid.support.lo, grid.support.hi)
    return dn.deposit_uniforms(grid.support, grid.bins, lo, hi, w[alive])


def update_cavity(sys: AugmentedSystem, i: int, mu: int, state: MessageState, cfg: MpConfig) -> EmpiricalDensity:
    incoming = [state.msg[(nu, i)] for nu in sys.var_adj[i] if nu != mu]
    new = dn.product(incoming) if incoming else state.priors[i]
    if new.null:
        return new
    old = state.cav.get((i, mu))
    if old is not None and cfg.damping > 0:
        new = dn.mix(old, new, cfg.damping)
    return new


def _fallback_message(sys: AugmentedSystem, mu: int, i: int, state: MessageState) -> EmpiricalDensity:
    grid = state.priors[i]
    nbrs = {j: state.priors[j].support for j in sys.cons_adj[mu] if j != i}
    iv = factor_support(sys, mu, i, nbrs, current=grid.support)
    return dn.interval_uniform_on(grid, iv)


def edge_rng(seed: int, mu: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, mu, i]))


def sweep(sys: AugmentedSystem, state: MessageState, cfg: MpConfig, rng: Optional[np.random.Generator] = None) -> float:
    """One two-phase sweep: every message from frozen cavity laws, then every cavity law.

    Each edge draws from a stream seeded by ``(seed, mu, i)``, so the update
    map is the same deterministic function at every sweep and the result does
    not depend on the visiting order.
    """
    edges = sys.x_edges()
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2**31 - 1, state.sweep_count]))
    delta = 0.0
    new_msgs = {}
    for idx in rng.permutation(len(edges)):
        mu, i = edges[idx]
        old = state.msg[(mu, i)]
        new = update_message(sys, mu, i, state, cfg, edge_rng(cfg.seed, mu, i))
        if new.null:
            state.null_incidents += 1
            streak = state.null_streak.get((mu, i), 0) + 1
            state.null_streak[(mu, i)] = streak
            new = old
            if streak >= NULL_FALLBACK_AFTER:
                fb = _fallback_message(sys, mu, i, state)
                if not fb.null:
                    new = fb
                logger.debug("edge %d->%d: %d consecutive null updates", mu, i, streak)
        else:
            state.null_streak[(mu, i)] = 0
        new_msgs[(mu, i)] = new
        delta = max(delta, dn.tv_distance(old, new))
    state.msg.update(new_msgs)

    for mu, i in edges:
        new = update_cavity(sys, i, mu, state, cfg)
        if new.null:
            state.null_incidents += 1
            continue
        state.cav[(i, mu)] = new
    state.sweep_count += 1
    state.last_delta = delta
    return delta


def marginal(sys: AugmentedSystem, i: int, state: MessageState) -> EmpiricalDensity:
    incoming = [state.msg[(nu, i)] for nu in sys.var_adj[i]]
    return dn.product(incoming) if incoming else state.priors[i]


@dataclass
class MpResult:
    marginals: list[EmpiricalDensity]
    supports: tuple[Interval, ...]
    report: dict
    state: MessageState


def run_mp(instance: Instance, cfg: Optional[MpConfig] = None) -> MpResult:
    """Iterate the weighted cavity equations and return per-variable marginals.

    Messages start uniform on the support-propagation intervals. Sweeps stop
    when the largest message change (total variation) drops below ``cfg.tol``
    or after ``cfg.max_sweeps``.
    """
    cfg = cfg or MpConfig()
    sys = build_augmented(instance)
    sup = run_support_bp(sys)
    if not sup.feasible:
        empty = [j for j, iv in enumerate(sup.intervals + sup.slack_intervals) if iv.is_empty]
        raise InfeasibleError(f"support propagation found empty domains for variables {empty}")
    state = init_state(sys, sup.intervals + sup.slack_intervals, cfg)

    converged = not sys.x_edges()
    if converged:
        state.last_delta = 0.0
    while not converged and state.sweep_count < cfg.max_sweeps:
        delta = sweep(sys, state, cfg)
        logger.debug("sweep %d: max TV change %.3g", state.sweep_count, delta)
        converged = delta < cfg.tol

    marginals = [marginal(sys, i, state) for i in range(sys.n_vars)]
    null_marginals = [i for i, d in enumerate(marginals) if d.null]
    report = {
        "sweeps": state.sweep_count,
        "final_delta": state.last_delta,
        "converged": converged,
        "tol": cfg.tol,
        "rejection_rate": {
            f"{mu}->{i}": (z / t if t else 0.0) for (mu, i), (z, t) in sorted(state.rejection_stats.items())
        },
        "null_incidents": state.null_incidents,
        "null_marginals": null_marginals,
    }
    return MpResult(marginals=marginals, supports=sup.intervals, report=report, state=state)
