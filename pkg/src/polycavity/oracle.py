"""Brute-force midpoint quadrature of the volume and marginals of tiny instances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from polycavity import density as dn
from polycavity.model import Instance

MAX_VARS = 4
CHUNK_CELLS = 2_000_000


@dataclass(frozen=True)
class OracleResult:
    volume_fraction: float
    marginals: list[dn.EmpiricalDensity]
    grid_res: int


def grid_quadrature(instance: Instance, res: int = 201) -> OracleResult:
    """Evaluate the feasibility indicator at the midpoints of a ``res**N`` grid.

    Cell counts are integers, so the reduction is exact and independent of
    chunking order. Marginal masses are the per-axis projections of the counts.
    """
    n = instance.n_vars
    if n > MAX_VARS:
        raise ValueError(f"grid quadrature is limited to N <= {MAX_VARS} (got {n})")
    if res < 11 or res % 2 == 0:
        raise ValueError(f"res must be odd and >= 11, got {res}")

    axes = [
        lo + (np.arange(res) + 0.5) * (hi - lo) / res for lo, hi in instance.domains
    ]
    xi, gamma = instance.xi_dense, instance.gamma_array
    counts = [np.zeros(res, dtype=np.int64) for _ in range(n)]

    # chunk over the leading axes; the trailing block is materialized at once
    tail = 1
    while tail < n and res ** (tail + 1) <= CHUNK_CELLS:
        tail += 1
    head = n - tail
    tail_grid = np.stack(np.meshgrid(*axes[head:], indexing="ij"), axis=-1).reshape(-1, tail)
    tail_idx = np.stack(np.meshgrid(*[np.arange(res)] * tail, indexing="ij"), axis=-1).reshape(-1, tail)
    tail_part = tail_grid @ xi[:, head:].T if xi.shape[0] else np.zeros((tail_grid.shape[0], 0))

    total = 0
    for head_idx in np.ndindex(*([res] * head)):
        head_val = np.array([axes[k][j] for k, j in enumerate(head_idx)])
        lhs = tail_part + (xi[:, :head] @ head_val if head else 0.0)
        ok = np.all(lhs >= gamma, axis=1)
        c = int(ok.sum())
        if not c:
            continue
        total += c
        for k, j in enumerate(head_idx):
            counts[k][j] += c
        for k in range(tail):
            counts[head + k] += np.bincount(tail_idx[ok, k], minlength=res)

    volume_fraction = total / res**n
    marginals = []
    for i in range(n):
        support = instance.domain(i)
        if total:
            marginals.append(dn.EmpiricalDensity(support, counts[i] / total))
        else:
            marginals.append(dn.EmpiricalDensity(support, np.zeros(res), null=True))
    return OracleResult(volume_fraction, marginals, res)
