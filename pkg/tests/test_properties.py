import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from polycavity import density as dn
from polycavity.cavity import acceptance_interval
from polycavity.generate import gen_network
from polycavity.intervals import Interval
from polycavity.model import (
    AugmentedSystem,
    build_augmented,
    dumps_instance,
    instance_from_dict,
    instance_to_dict,
    residual,
)
from polycavity.support import run_support_bp

reals = st.floats(-10, 10, allow_nan=False)
unit = st.floats(0, 1)


@st.composite
def intervals(draw):
    a, b = draw(reals), draw(reals)
    return Interval(min(a, b), max(a, b))


@st.composite
def densities(draw, bins=8):
    m = np.array(draw(st.lists(st.floats(0.01, 1), min_size=bins, max_size=bins)))
    return dn.EmpiricalDensity(Interval(0, 1), m / m.sum())


@given(intervals(), intervals())
def test_interval_algebra(a, b):
    c = a.intersect(b)
    assert c.issubset(a) and c.issubset(b)
    s = a + b
    assert s.lo == a.lo + b.lo and s.hi == a.hi + b.hi
    assert a.scale(-1).scale(-1) == a


@given(densities(), unit, unit, unit)
def test_mass_in_additive(d, x, y, z):
    a, b, c = sorted((x, y, z))
    whole = dn.mass_in(d, Interval(a, c))
    parts = dn.mass_in(d, Interval(a, b)) + dn.mass_in(d, Interval(b, c))
    assert abs(whole - parts) <= 1e-12
    assert 0.0 <= whole <= 1.0 + 1e-12


@given(densities(), unit, unit, st.integers(0, 2**32 - 1))
def test_sample_truncated_contained(d, x, y, seed):
    r = Interval(min(x, y), max(x, y))
    if dn.mass_in(d, r) <= 0:
        return
    rng = np.random.default_rng(seed)
    for _ in range(20):
        assert r.contains(dn.sample_truncated(d, r, rng))


def test_sample_between_fuzz():
    rng = np.random.default_rng(11)
    m = rng.random(50)
    m[rng.random(50) < 0.3] = 0.0
    d = dn.EmpiricalDensity(Interval(-1, 2), m / m.sum())
    n = 1_000_000
    a, b = rng.uniform(-1.5, 2.5, n), rng.uniform(-1.5, 2.5, n)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    ok = np.array([dn.mass_in(d, Interval(l, h)) > 0 for l, h in zip(lo[:2000], hi[:2000])])
    lo, hi = lo[:2000][ok], hi[:2000][ok]
    reps = n // len(lo) + 1
    lo, hi = np.tile(lo, reps)[:n], np.tile(hi, reps)[:n]
    v = dn.sample_between(d, lo, hi, rng.random(n))
    assert np.all((v >= np.maximum(lo, -1)) & (v <= np.minimum(hi, 2)))


@given(densities(), densities(), densities())
def test_product_commutative_associative(a, b, c):
    ab = dn.product([a, b])
    assert np.max(np.abs(ab.mass - dn.product([b, a]).mass)) <= 1e-12
    left = dn.product([ab, c])
    right = dn.product([a, dn.product([b, c])])
    assert np.max(np.abs(left.mass - right.mass)) <= 1e-12
    assert abs(left.mass.sum() - 1) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.tuples(unit, unit), min_size=25, max_size=25))
def test_support_inclusion_monotone(seed, cuts):
    inst = gen_network(seed=seed)
    base = run_support_bp(inst)
    shrunk = inst.with_domains([(0.5 * x, 1 - 0.5 * y) for x, y in cuts])
    small = run_support_bp(shrunk)
    for a, b in zip(small.intervals, base.intervals):
        assert a.issubset(b)
    if small.feasible:
        again = run_support_bp(shrunk.with_domains([(iv.lo, iv.hi) for iv in small.intervals]))
        assert again.intervals == small.intervals


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_residual_matches_augmented(seed):
    inst = gen_network(seed=seed)
    sys = build_augmented(inst)
    x = np.random.default_rng(seed).random((500, inst.n_vars))
    r = x @ inst.xi_dense.T - inst.gamma_array
    for mu, row in enumerate(sys.eta):
        lhs = sum(c * (x[:, j] if j < inst.n_vars else r[:, mu]) for j, c in row)
        assert np.max(np.abs(sys.gamma[mu] - lhs)) <= 1e-12
    assert np.max(np.abs(residual(inst, x[0]) - r[0])) <= 1e-12
    # feasibility via residual agrees with slack domains of the augmented system
    slack_doms = sys.var_domains[inst.n_vars:]
    via_aug = np.all([[iv.contains(v) for iv, v in zip(slack_doms, rr)] for rr in r], axis=1)
    assert np.array_equal(via_aug, np.all(r >= 0, axis=1))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_json_round_trip(seed):
    inst = gen_network(seed=seed)
    text = dumps_instance(inst)
    assert dumps_instance(instance_from_dict(instance_to_dict(inst))) == text


def random_factor(rng, k):
    """One factor with ``k`` bounded neighbors (index k is the target)."""
    coefs = rng.uniform(0.1, 1, k + 1) * rng.choice([-1, 1], k + 1)
    lo = rng.uniform(-1, 0.5, k + 1)
    hi = lo + rng.uniform(0.1, 1.5, k + 1)
    gamma = float(coefs @ rng.uniform(lo, hi))
    row = tuple((j, float(c)) for j, c in enumerate(coefs))
    doms = tuple(Interval(a, b) for a, b in zip(lo, hi))
    sys = AugmentedSystem(k + 1, 1, (gamma,), (row,), doms, (tuple(range(k + 1)),), tuple((0,) for _ in range(k + 1)))
    return sys


def completable(sys, fixed: dict) -> bool:
    """Independent LP check that the equality has an in-domain completion."""
    row = dict(sys.eta[0])
    free = [j for j in row if j not in fixed]
    rhs = sys.gamma[0] - sum(row[j] * v for j, v in fixed.items())
    if not free:
        return abs(rhs) < 1e-9
    res = linprog(
        np.zeros(len(free)),
        A_eq=[[row[j] for j in free]],
        b_eq=[rhs],
        bounds=[(sys.var_domains[j].lo, sys.var_domains[j].hi) for j in free],
        method="highs",
    )
    return res.status == 0


def test_acceptance_interval_soundness():
    rng = np.random.default_rng(2024)
    cases = 0
    while cases < 100_000:
        k = int(rng.integers(1, 5))
        sys = random_factor(rng, k)
        target = k
        order = list(range(k))
        partial = []
        for j in order:
            iv = acceptance_interval(sys, 0, target, order, partial)
            cases += 1
            assert not iv.is_empty
            v = float(rng.uniform(iv.lo, iv.hi))
            partial.append(v)
        assert acceptance_interval(sys, 0, target, order, partial) is None
        row = dict(sys.eta[0])
        s_t = (sys.gamma[0] - sum(row[j] * v for j, v in zip(order, partial))) / row[target]
        assert sys.var_domains[target].contains(s_t, tol=1e-9)


def test_acceptance_interval_tightness():
    # values just outside the returned interval admit no completion
    rng = np.random.default_rng(7)
    for _ in range(300):
        k = int(rng.integers(1, 4))
        sys = random_factor(rng, k)
        order = list(range(k))
        iv = acceptance_interval(sys, 0, k, order, [])
        d = sys.var_domains[0]
        assert completable(sys, {0: 0.5 * (iv.lo + iv.hi)})
        for gap_lo, gap_hi in ((d.lo, iv.lo), (iv.hi, d.hi)):
            if gap_hi - gap_lo > 1e-6:
                assert not completable(sys, {0: 0.5 * (gap_lo + gap_hi)})
