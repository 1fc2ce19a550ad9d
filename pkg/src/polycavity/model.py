"""Polytope instances in H-representation and their slack-augmented factor graph.

An instance is the set of points ``x`` in a box ``D`` satisfying

    sum_i xi[mu, i] * x_i >= gamma[mu]      for mu = 0..M-1.

Each inequality is turned into an equality by a slack variable
``z_mu = sum_i xi[mu, i] x_i - gamma[mu] >= 0``, so that factor ``mu`` reads
``gamma[mu] - sum_j eta[mu, j] s_j = 0`` over ``s = (x_0..x_{N-1}, z_0..z_{M-1})``
with ``eta[mu, N + mu] = -1``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from polycavity.intervals import EMPTY, Interval

logger = logging.getLogger(__name__)

PLANTED_MARGIN = 1e-6
SLACK_COEF = -1.0

_REQUIRED_KEYS = ("n_vars", "n_cons", "gamma", "domains")
_OPTIONAL_KEYS = ("xi", "rho", "a", "b", "planted_point")


class InstanceError(ValueError):
    """Malformed or invalid instance data."""


class InfeasibleError(RuntimeError):
    """The polytope is provably empty (or degenerate) on its box."""


class DegenerateConstraintError(InfeasibleError):
    """A constraint can only be met on a measure-zero face of the box."""


Triplets = tuple[tuple[int, int, float], ...]


def _canonical_triplets(entries: Iterable[Sequence[float]]) -> Triplets:
    out = []
    for e in entries:
        if len(e) != 3:
            raise InstanceError(f"sparse entry must be [mu, i, value], got {e!r}")
        mu, i, v = e
        if int(mu) != mu or int(i) != i:
            raise InstanceError(f"non-integer index in sparse entry {e!r}")
        out.append((int(mu), int(i), float(v)))
    out.sort(key=lambda t: (t[0], t[1]))
    return tuple(out)


@dataclass(frozen=True)
class Instance:
    """A polytope ``{x in box : xi x >= gamma}``.

    Construction does not validate; call :func:`validate_instance` (or
    :func:`build_augmented`, which refuses invalid instances).
    """

    n_vars: int
    n_cons: int
    xi: Triplets
    gamma: tuple[float, ...]
    domains: tuple[tuple[float, float], ...]
    growth_rate: Optional[float] = None
    input_matrix: Optional[Triplets] = None
    output_matrix: Optional[Triplets] = None
    planted_point: Optional[tuple[float, ...]] = None

    @classmethod
    def create(
        cls,
        n_vars: int,
        xi: Iterable[Sequence[float]],
        gamma: Sequence[float],
        domains: Sequence[Sequence[float]],
        planted_point: Optional[Sequence[float]] = None,
        n_cons: Optional[int] = None,
        growth_rate: Optional[float] = None,
        input_matrix=None,
        output_matrix=None,
    ) -> Instance:
        return cls(
            n_vars=int(n_vars),
            n_cons=len(gamma) if n_cons is None else int(n_cons),
            xi=_canonical_triplets(xi),
            gamma=tuple(float(g) for g in gamma),
            domains=tuple((float(lo), float(hi)) for lo, hi in domains),
            growth_rate=None if growth_rate is None else float(growth_rate),
            input_matrix=None if input_matrix is None else _canonical_triplets(input_matrix),
            output_matrix=None if output_matrix is None else _canonical_triplets(output_matrix),
            planted_point=None if planted_point is None else tuple(float(v) for v in planted_point),
        )

    @classmethod
    def from_von_neumann(cls, n_vars, input_matrix, output_matrix, rho, gamma, domains, **kw) -> Instance:
        """Build ``xi = B - rho * A`` from input/output matrices and a growth rate."""
        xi = _combine_von_neumann(_canonical_triplets(input_matrix), _canonical_triplets(output_matrix), rho)
        return cls.create(
            n_vars, xi, gamma, domains, growth_rate=rho,
            input_matrix=input_matrix, output_matrix=output_matrix, **kw,
        )

    @cached_property
    def xi_dense(self) -> np.ndarray:
        a = np.zeros((self.n_cons, self.n_vars))
        for mu, i, v in self.xi:
            a[mu, i] = v
        a.setflags(write=False)
        return a

    @cached_property
    def gamma_array(self) -> np.ndarray:
        g = np.array(self.gamma, dtype=float)
        g.setflags(write=False)
        return g

    @cached_property
    def lower(self) -> np.ndarray:
        return np.array([d[0] for d in self.domains], dtype=float)

    @cached_property
    def upper(self) -> np.ndarray:
        return np.array([d[1] for d in self.domains], dtype=float)

    def domain(self, i: int) -> Interval:
        return Interval(*self.domains[i])

    def with_domains(self, domains: Sequence[Sequence[float]]) -> Instance:
        """Same constraints on a new box; the planted point is kept only if still strictly interior."""
        new = replace(self, domains=tuple((float(lo), float(hi)) for lo, hi in domains), planted_point=None)
        if self.planted_point is not None and not _planted_violations(new, self.planted_point):
            new = replace(new, planted_point=self.planted_point)
        return new


def _combine_von_neumann(a: Triplets, b: Triplets, rho: float) -> Triplets:
    acc: dict[tuple[int, int], float] = {}
    for mu, i, v in b:
        acc[(mu, i)] = acc.get((mu, i), 0.0) + v
    for mu, i, v in a:
        acc[(mu, i)] = acc.get((mu, i), 0.0) - rho * v
    return tuple(sorted((mu, i, v) for (mu, i), v in acc.items() if v != 0.0))


def residual(instance: Instance, x: Sequence[float]) -> np.ndarray:
    """Constraint slacks ``xi x - gamma``; ``x`` is feasible iff all are >= 0 and ``x`` is in the box."""
    x = np.asarray(x, dtype=float)
    if x.shape != (instance.n_vars,):
        raise ValueError(f"point has shape {x.shape}, expected ({instance.n_vars},)")
    return instance.xi_dense @ x - instance.gamma_array


def _planted_violations(instance: Instance, x0: Sequence[float]) -> list[str]:
    out = []
    if len(x0) != instance.n_vars:
        return [f"planted_point has length {len(x0)}, expected {instance.n_vars}"]
    x = np.asarray(x0, dtype=float)
    for i, (lo, hi) in enumerate(instance.domains):
        if not lo < x[i] < hi:
            out.append(f"planted_point[{i}]={x[i]} not strictly inside domain [{lo}, {hi}]")
    r = residual(instance, x)
    for mu, g in enumerate(instance.gamma):
        margin = PLANTED_MARGIN * max(1.0, abs(g))
        if not r[mu] >= margin:
            out.append(f"planted_point violates constraint {mu}: residual {r[mu]:.6g} < margin {margin:.3g}")
    return out


def validate_instance(instance: Instance) -> list[str]:
    """List every violated instance invariant; an empty list means valid."""
    problems: list[str] = []
    n, m = instance.n_vars, instance.n_cons
    if n < 1:
        problems.append(f"n_vars must be >= 1, got {n}")
    if m < 0:
        problems.append(f"n_cons must be >= 0, got {m}")
    if len(instance.gamma) != m:
        problems.append(f"gamma has length {len(instance.gamma)}, expected n_cons={m}")
    for mu, g in enumerate(instance.gamma):
        if not math.isfinite(g):
            problems.append(f"gamma[{mu}] is not finite")
    if len(instance.domains) != n:
        problems.append(f"domains has length {len(instance.domains)}, expected n_vars={n}")
    for i, (lo, hi) in enumerate(instance.domains):
        if not (math.isfinite(lo) and math.isfinite(hi)):
            problems.append(f"domain of variable {i} is unbounded: [{lo}, {hi}]")
        elif lo > hi:
            problems.append(f"domain of variable {i} has lo > hi: [{lo}, {hi}]")

    row_count = [0] * max(m, 0)
    seen = set()
    for mu, i, v in instance.xi:
        if not (0 <= mu < m and 0 <= i < n):
            problems.append(f"xi entry ({mu}, {i}) out of range")
            continue
        if (mu, i) in seen:
            problems.append(f"duplicate xi entry ({mu}, {i})")
        seen.add((mu, i))
        if v == 0.0 or not math.isfinite(v):
            problems.append(f"xi entry ({mu}, {i}) must be nonzero and finite, got {v}")
        row_count[mu] += 1
    for mu, c in enumerate(row_count):
        if c == 0:
            problems.append(f"constraint {mu} has no nonzero coefficient")

    vn = (instance.growth_rate, instance.input_matrix, instance.output_matrix)
    if any(v is not None for v in vn):
        if any(v is None for v in vn):
            problems.append("rho, a and b must be given together")
        else:
            rebuilt = _combine_von_neumann(instance.input_matrix, instance.output_matrix, instance.growth_rate)
            if not _triplets_close(rebuilt, instance.xi):
                problems.append("xi does not equal b - rho * a")

    if instance.planted_point is not None and not problems:
        problems.extend(_planted_violations(instance, instance.planted_point))
    return problems


def _triplets_close(a: Triplets, b: Triplets, tol: float = 1e-12) -> bool:
    if [(t[0], t[1]) for t in a] != [(t[0], t[1]) for t in b]:
        return False
    return all(abs(x[2] - y[2]) <= tol * max(1.0, abs(y[2])) for x, y in zip(a, b))


@dataclass(frozen=True)
class AugmentedSystem:
    """Slack-augmented equality system and its bipartite factor graph.

    Variables ``0..N-1`` are the original coordinates, ``N + mu`` is the slack of
    constraint ``mu``. ``eta[mu]`` lists ``(variable, coefficient)`` pairs in
    ascending variable order, so the slack entry is always last.
    """

    n_vars: int
    n_cons: int
    gamma: tuple[float, ...]
    eta: tuple[tuple[tuple[int, float], ...], ...]
    var_domains: tuple[Interval, ...]
    cons_adj: tuple[tuple[int, ...], ...]
    var_adj: tuple[tuple[int, ...], ...]
    _coef: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for mu, row in enumerate(self.eta):
            for j, c in row:
                self._coef[(mu, j)] = c

    @property
    def n_total(self) -> int:
        return self.n_vars + self.n_cons

    def slack_index(self, mu: int) -> int:
        return self.n_vars + mu

    def is_slack(self, j: int) -> bool:
        return j >= self.n_vars

    def coef(self, mu: int, j: int) -> float:
        return self._coef[(mu, j)]

    def x_edges(self) -> list[tuple[int, int]]:
        """Factor-to-original-variable edges ``(mu, i)`` in canonical order."""
        return [(mu, i) for mu in range(self.n_cons) for i in self.cons_adj[mu] if i < self.n_vars]


def slack_upper_bound(xi_row: Sequence[tuple[int, float]], domains, gamma_mu: float) -> float:
    """Largest value of ``sum xi x - gamma`` over the box."""
    total = 0.0
    for i, v in xi_row:
        lo, hi = domains[i]
        total += max(v * lo, v * hi)
    return total - gamma_mu


def build_augmented(instance: Instance, strict: bool = True) -> AugmentedSystem:
    """Append one slack per constraint and build the factor graph.

    With ``strict=False`` rows that cannot be met on the box get an EMPTY slack
    domain instead of raising, which lets support propagation report them.
    """
    problems = validate_instance(instance)
    if problems:
        raise InstanceError("invalid instance: " + "; ".join(problems))
    n, m = instance.n_vars, instance.n_cons
    rows: list[list[tuple[int, float]]] = [[] for _ in range(m)]
    for mu, i, v in instance.xi:
        rows[mu].append((i, v))

    var_domains = [instance.domain(i) for i in range(n)]
    var_adj: list[list[int]] = [[] for _ in range(n + m)]
    eta = []
    for mu, row in enumerate(rows):
        z_max = slack_upper_bound(row, instance.domains, instance.gamma[mu])
        if not strict:
            var_domains.append(Interval(0.0, z_max) if z_max >= 0 else EMPTY)
        elif z_max < 0:
            raise InfeasibleError(f"constraint {mu} cannot be satisfied anywhere in the box (max slack {z_max:.6g})")
        elif z_max == 0:
            logger.warning("constraint %d is only satisfiable on a box face; rejected", mu)
            raise DegenerateConstraintError(f"constraint {mu} has zero maximal slack (equality-only support)")
        else:
            var_domains.append(Interval(0.0, z_max))
        full = tuple(row) + ((n + mu, SLACK_COEF),)
        eta.append(full)
        for j, _ in full:
            var_adj[j].append(mu)

    return AugmentedSystem(
        n_vars=n,
        n_cons=m,
        gamma=instance.gamma,
        eta=tuple(eta),
        var_domains=tuple(var_domains),
        cons_adj=tuple(tuple(j for j, _ in row) for row in eta),
        var_adj=tuple(tuple(a) for a in var_adj),
    )


# --- JSON schema -------------------------------------------------------------


def instance_to_dict(instance: Instance) -> dict:
    d = {
        "n_vars": instance.n_vars,
        "n_cons": instance.n_cons,
        "xi": [[mu, i, v] for mu, i, v in instance.xi],
        "gamma": list(instance.gamma),
        "domains": [[lo, hi] for lo, hi in instance.domains],
    }
    if instance.growth_rate is not None:
        d["rho"] = instance.growth_rate
        d["a"] = [[mu, i, v] for mu, i, v in instance.input_matrix]
        d["b"] = [[mu, i, v] for mu, i, v in instance.output_matrix]
    if instance.planted_point is not None:
        d["planted_point"] = list(instance.planted_point)
    return d


def instance_from_dict(d: dict) -> Instance:
    if not isinstance(d, dict):
        raise InstanceError("instance JSON must be an object")
    unknown = set(d) - set(_REQUIRED_KEYS) - set(_OPTIONAL_KEYS)
    if unknown:
        raise InstanceError(f"unknown keys in instance: {sorted(unknown)}")
    missing = [k for k in _REQUIRED_KEYS if k not in d]
    if missing:
        raise InstanceError(f"missing keys in instance: {missing}")
    vn = [k for k in ("rho", "a", "b") if k in d]
    if vn and len(vn) != 3:
        raise InstanceError("rho, a and b must be given together")
    try:
        if "xi" in d:
            xi = d["xi"]
        elif vn:
            xi = _combine_von_neumann(_canonical_triplets(d["a"]), _canonical_triplets(d["b"]), float(d["rho"]))
        else:
            raise InstanceError("instance needs xi or (rho, a, b)")
        inst = Instance.create(
            n_vars=d["n_vars"],
            n_cons=d["n_cons"],
            xi=xi,
            gamma=d["gamma"],
            domains=d["domains"],
            planted_point=d.get("planted_point"),
            growth_rate=d.get("rho"),
            input_matrix=d.get("a"),
            output_matrix=d.get("b"),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InstanceError):
            raise
        raise InstanceError(f"malformed instance: {exc}") from exc
    return inst


def dumps_instance(instance: Instance) -> str:
    """Canonical JSON text; parse -> dump round-trips byte for byte."""
    d = instance_to_dict(instance)
    body = ",\n".join(f" {json.dumps(k)}: {json.dumps(v)}" for k, v in d.items())
    return "{\n" + body + "\n}\n"


def save_instance(instance: Instance, path) -> None:
    Path(path).write_text(dumps_instance(instance))


def load_instance(path, validate: bool = True) -> Instance:
    """Parse an instance file; with ``validate`` any invariant violation raises InstanceError."""
    with open(path) as fh:
        try:
            inst = instance_from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise InstanceError(f"{path}: not valid JSON ({exc})") from exc
    if validate:
        problems = validate_instance(inst)
        if problems:
            raise InstanceError(f"{path}: " + "; ".join(problems))
    return inst
