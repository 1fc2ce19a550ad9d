"""Random diluted polytopes with a planted interior point, plus canned test instances."""

from __future__ import annotations

import json
import logging
from importlib import resources
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from polycavity.model import Instance, instance_from_dict

logger = logging.getLogger(__name__)

COEF_FLOOR = 0.1
SLACK_RANGE = (0.05, 0.3)
MAX_ATTEMPTS = 100


def truncated_poisson_rate(mean: float) -> float:
    """Rate ``lam`` of a zero-truncated Poisson law whose mean is ``mean`` (> 1)."""
    if not mean > 1.0:
        raise ValueError(f"mean variable degree must exceed 1 when every variable has degree >= 1, got {mean}")
    return brentq(lambda lam: lam / -np.expm1(-lam) - mean, 1e-12, mean + 10.0)


def _draw_degrees(n: int, lam: float, cap: int, rng: np.random.Generator) -> np.ndarray:
    deg = rng.poisson(lam, size=n)
    while np.any(deg == 0):
        redo = deg == 0
        deg[redo] = rng.poisson(lam, size=int(redo.sum()))
    return np.minimum(deg, cap)


def _draw_coefficients(k: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(COEF_FLOOR, 1.0, size=k) * rng.choice([-1.0, 1.0], size=k)


def plant_feasibility(xi, domains: Sequence[Sequence[float]], seed) -> tuple[np.ndarray, np.ndarray]:
    """Pick ``x0`` in the middle half of the box and set ``gamma = xi x0 - slack``.

    ``slack`` is uniform on ``[0.05, 0.3]`` per row, so ``x0`` satisfies every
    constraint with at least that margin. ``xi`` is a dense ``M x N`` array.
    """
    rng = np.random.default_rng(seed)
    xi = np.asarray(xi, dtype=float)
    lo = np.array([d[0] for d in domains], dtype=float)
    hi = np.array([d[1] for d in domains], dtype=float)
    w = hi - lo
    x0 = rng.uniform(lo + 0.25 * w, hi - 0.25 * w)
    slack = rng.uniform(*SLACK_RANGE, size=xi.shape[0])
    gamma = xi @ x0 - slack
    return gamma, x0


def gen_network(
    n_vars: int = 25,
    n_cons: int = 10,
    mean_var_degree: float = 1.5,
    mean_cons_degree: float = 3.75,
    seed: int = 0,
    domains: Optional[Sequence[Sequence[float]]] = None,
) -> Instance:
    """Random bipartite constraint graph with planted feasibility.

    Variable degrees follow a zero-truncated Poisson law with mean
    ``mean_var_degree``; each variable's edges go to distinct constraints drawn
    uniformly, so constraint degrees are close to Poisson with mean
    ``n_vars * mean_var_degree / n_cons``.
    """
    if n_vars < 1 or n_cons < 1:
        raise ValueError("n_vars and n_cons must be positive")
    if not (mean_var_degree > 0 and mean_cons_degree > 0):
        raise ValueError("mean degrees must be positive")
    edges_v, edges_c = n_vars * mean_var_degree, n_cons * mean_cons_degree
    if abs(edges_v - edges_c) > 0.1 * max(edges_v, edges_c):
        logger.warning(
            "degree means imply %.3g variable-side vs %.3g constraint-side edges; "
            "constraint degrees follow the variable side", edges_v, edges_c,
        )
    lam = truncated_poisson_rate(mean_var_degree)
    domains = [(0.0, 1.0)] * n_vars if domains is None else [tuple(map(float, d)) for d in domains]
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    for _ in range(MAX_ATTEMPTS):
        deg = _draw_degrees(n_vars, lam, n_cons, rng)
        entries = []
        for i, k in enumerate(deg):
            for mu in rng.choice(n_cons, size=int(k), replace=False):
                entries.append((int(mu), i))
        covered = {mu for mu, _ in entries}
        if len(covered) == n_cons:
            break
    else:
        raise RuntimeError(f"could not cover all {n_cons} constraints in {MAX_ATTEMPTS} attempts")

    entries.sort()
    coefs = _draw_coefficients(len(entries), rng)
    xi = np.zeros((n_cons, n_vars))
    for (mu, i), c in zip(entries, coefs):
        xi[mu, i] = c
    gamma, x0 = plant_feasibility(xi, domains, rng)
    return Instance.create(
        n_vars,
        [(mu, i, float(c)) for (mu, i), c in zip(entries, coefs)],
        [float(g) for g in gamma],
        domains,
        planted_point=[float(v) for v in x0],
    )


def tree_instance(n_vars: int, seed: int) -> Instance:
    """Planted instance whose factor graph is a tree (each factor joins 2-3 variables)."""
    if n_vars < 2:
        raise ValueError("a tree instance needs at least 2 variables")
    rng = np.random.default_rng(np.random.SeedSequence([seed, n_vars]))
    rows: list[list[int]] = []
    placed = 1
    while placed < n_vars:
        parent = int(rng.integers(placed))
        k = min(int(rng.integers(1, 3)), n_vars - placed)
        rows.append([parent, *range(placed, placed + k)])
        placed += k
    entries = [(mu, i) for mu, row in enumerate(rows) for i in sorted(row)]
    coefs = _draw_coefficients(len(entries), rng)
    xi = np.zeros((len(rows), n_vars))
    for (mu, i), c in zip(entries, coefs):
        xi[mu, i] = c
    domains = [(0.0, 1.0)] * n_vars
    gamma, x0 = plant_feasibility(xi, domains, rng)
    return Instance.create(
        n_vars,
        [(mu, i, float(c)) for (mu, i), c in zip(entries, coefs)],
        [float(g) for g in gamma],
        domains,
        planted_point=[float(v) for v in x0],
    )


def tiny_suite() -> list[Instance]:
    """Ten small planted instances (N in {2, 3}, M in {1, 2}) from the random ensemble."""
    out = []
    for seed in range(10):
        n = 2 + seed % 2
        m = 1 + (seed // 2) % 2
        out.append(gen_network(n, m, 1.5, n * 1.5 / m, seed=1000 + seed))
    return out


def tree_suite() -> list[Instance]:
    """Ten tree-structured planted instances small enough for grid quadrature."""
    return [tree_instance(3 + seed % 2, seed) for seed in range(10)]


def canned(name: str) -> Instance:
    """Load a shipped instance: ``t0``, ``t1``, ``t2`` or ``fig1``."""
    text = resources.files("polycavity.data").joinpath(f"{name}.json").read_text()
    return instance_from_dict(json.loads(text))
