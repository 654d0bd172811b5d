import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sfalloc import (
    PrincipleSpec,
    aggregate_excluding,
    aggregate_level,
    aggregate_tree,
    allocate,
    covariance_allocate,
    euler_allocate_level,
    euler_allocate_tree,
    haircut_allocate,
    marginal_allocate,
    market_driven_allocate,
    parse_tree,
    redistribute,
    scr_total,
)
from sfalloc.diagnostics import random_correlation, random_tree


def numeric_gradient(f, x, i, rel=1e-6):
    h = rel * x[i]
    up, dn = np.array(x, float), np.array(x, float)
    up[i] += h
    dn[i] -= h
    return (f(up) - f(dn)) / (2 * h)


def module_allocation_closed_form(mods, rho):
    """BSCR allocation among modules written out with explicit sums."""
    n = len(mods)
    bscr = math.sqrt(sum(mods[i] * mods[j] * rho[i][j] for i in range(n) for j in range(n)))
    return [mods[i] * sum(mods[j] * rho[i][j] for j in range(n)) / bscr for i in range(n)]


def subrisk_allocation_closed_form(subs, sub_rho, mod_rho):
    """BSCR allocation among sub-risks: SCR_iy * AR_iy * AR_i with explicit sums."""
    mods = []
    for s, p in zip(subs, sub_rho):
        m = len(s)
        mods.append(math.sqrt(sum(s[x] * s[y] * p[x][y] for x in range(m) for y in range(m))))
    n = len(mods)
    bscr = math.sqrt(sum(mods[i] * mods[j] * mod_rho[i][j] for i in range(n) for j in range(n)))
    out = []
    for i, (s, p) in enumerate(zip(subs, sub_rho)):
        ar_i = sum(mods[j] * mod_rho[i][j] for j in range(n)) / bscr
        for y in range(len(s)):
            ar_iy = sum(s[w] * p[y][w] for w in range(len(s))) / mods[i]
            out.append(s[y] * ar_iy * ar_i)
    return out


def test_level_examples():
    got = euler_allocate_level([112.69, 208.09, 100.37], np.eye(3), 257.05)
    np.testing.assert_allclose(got.allocated, [49.41, 168.45, 39.19], atol=0.01)
    got = euler_allocate_level([3, 4], np.eye(2), 5)
    np.testing.assert_allclose(got.allocated, [1.8, 3.2])
    np.testing.assert_allclose(got.ratios, [0.6, 0.8])
    got = euler_allocate_level([60, 70], np.ones((2, 2)), 130)
    np.testing.assert_allclose(got.allocated, [60, 70])


def test_level_zero_total_and_mismatch():
    got = euler_allocate_level([0, 0, 0], np.eye(3))
    assert got.allocated.tolist() == [0, 0, 0]
    with pytest.raises(ValueError, match="mismatch"):
        euler_allocate_level([1, 2], np.eye(3))


def test_module_level_closed_form(toy):
    agg = aggregate_tree(toy)
    mods = [agg.scr(m) for m in ("m1", "m2", "m3")]
    res = euler_allocate_tree(toy)
    expected = module_allocation_closed_form(mods, np.eye(3).tolist())
    np.testing.assert_allclose([res[m].allocated for m in ("m1", "m2", "m3")], expected, rtol=1e-13)


def test_subrisk_closed_form(toy):
    half = [[1, 0.5], [0.5, 1]]
    expected = subrisk_allocation_closed_form([[60, 70], [110, 130], [45, 70]], [half] * 3, np.eye(3).tolist())
    res = euler_allocate_tree(toy)
    np.testing.assert_allclose([res[n].allocated for n in toy.leaves()], expected, rtol=1e-13)
    assert np.round(expected, 2).tolist() == [22.17, 27.23, 74.89, 93.56, 14.01, 25.19]


def test_subrisk_closed_form_random(rng):
    for _ in range(20):
        n = int(rng.integers(1, 6))
        subs = [rng.uniform(1, 100, int(rng.integers(1, 5))).tolist() for _ in range(n)]
        sub_rho = [random_correlation(rng, len(s)).tolist() for s in subs]
        mod_rho = random_correlation(rng, n).tolist()
        doc = {"root": "r", "nodes": [{"id": "r", "name": "r", "children": [f"m{i}" for i in range(n)]}],
               "matrices": {"r": mod_rho}}
        for i, s in enumerate(subs):
            doc["nodes"].append({"id": f"m{i}", "name": "", "children": [f"m{i}_{y}" for y in range(len(s))]})
            doc["nodes"] += [{"id": f"m{i}_{y}", "name": "", "scr": v} for y, v in enumerate(s)]
            doc["matrices"][f"m{i}"] = sub_rho[i]
        t = parse_tree(doc)
        res = euler_allocate_tree(t)
        expected = subrisk_allocation_closed_form(subs, sub_rho, mod_rho)
        np.testing.assert_allclose([res[x].allocated for x in t.leaves()], expected, rtol=1e-12)


def test_tree_allocation_ratio_is_product(nonlife):
    res = euler_allocate_tree(nonlife)
    agg = aggregate_tree(nonlife)
    for nid in nonlife.preorder():
        prod = math.prod(res[p].level_ratio for p in nonlife.path(nid))
        assert res[nid].allocation_ratio == pytest.approx(prod, rel=1e-14)
        assert res[nid].allocated == pytest.approx(agg.scr(nid) * prod, rel=1e-12, abs=1e-9)


def test_chain_tree_identity():
    chain = parse_tree({"root": "r", "nodes": [{"id": "r", "name": "r", "children": ["a"]},
                                                {"id": "a", "name": "a", "children": ["x"]},
                                                {"id": "x", "name": "x", "scr": 9.5}],
                        "matrices": {"r": [[1]], "a": [[1]]}})
    res = euler_allocate_tree(chain)
    assert res["x"].allocated == 9.5 and res["x"].allocation_ratio == 1.0


def test_gradient_matches_central_difference(nonlife):
    # oracle: central difference of the whole nested BSCR in each leaf
    leaves = nonlife.leaves()
    base = np.array([nonlife.nodes[n].standalone_scr for n in leaves])
    res = euler_allocate_tree(nonlife)

    def bscr(x):
        return aggregate_tree(nonlife.with_leaf_scrs(dict(zip(leaves, x)))).bscr

    for i, leaf in enumerate(leaves):
        if base[i] == 0:
            continue
        fd = numeric_gradient(bscr, base, i, rel=1e-4)
        assert res[leaf].allocation_ratio == pytest.approx(fd, rel=1e-6)


def test_haircut_examples():
    np.testing.assert_allclose(haircut_allocate([112.69, 208.09, 100.37], 257.05), [68.78, 127.00, 61.26], atol=0.01)
    np.testing.assert_allclose(haircut_allocate([5, 5], 8), [4, 4])
    got = haircut_allocate([60, 70, 110, 130, 45, 70], 257.05)
    np.testing.assert_allclose(got, [31.80, 37.10, 58.30, 68.90, 23.85, 37.10], atol=0.01)
    with pytest.raises(ValueError):
        haircut_allocate([0, 0], 1)


def test_marginal_matches_leave_one_out_oracle(toy):
    bscr = aggregate_tree(toy).bscr
    for cut in (["m1", "m2", "m3"], toy.leaves()):
        drops = [bscr - aggregate_excluding(toy, n) for n in cut]
        expected = [bscr * d / sum(drops) for d in drops]
        np.testing.assert_allclose(marginal_allocate(toy, cut), expected, rtol=1e-14)
    assert marginal_allocate(toy, ["m1"], 12.0).tolist() == [12.0]


def test_marginal_modules(toy):
    got = marginal_allocate(toy, ["m1", "m2", "m3"])
    assert got[0] == pytest.approx(43.84, abs=0.01)
    assert got[2] == pytest.approx(34.38, abs=0.01)
    assert got.sum() == pytest.approx(aggregate_tree(toy).bscr, rel=1e-12)


def test_covariance_examples(toy):
    got = covariance_allocate(257.05, [112.69, 208.09, 100.37], np.eye(3))
    np.testing.assert_allclose(got, euler_allocate_level([112.69, 208.09, 100.37], np.eye(3)).allocated * 257.05
                               / aggregate_level([112.69, 208.09, 100.37], np.eye(3)), rtol=1e-12)
    np.testing.assert_allclose(covariance_allocate(8, covariances=[1, 3], variance=4), [2, 6])
    np.testing.assert_allclose(covariance_allocate(130, [60, 70], np.ones((2, 2))), [60, 70])
    with pytest.raises(ValueError, match="zero variance"):
        covariance_allocate(1, [0, 0], np.eye(2))


def test_market_examples():
    got = market_driven_allocate(12_137, [1] * 9)
    np.testing.assert_allclose(got, 1348.555, atol=0.1)
    np.testing.assert_allclose(market_driven_allocate(10, [1, 4]), [2, 8])
    np.testing.assert_allclose(market_driven_allocate(100, [0, 0, 5]), [0, 0, 100])
    with pytest.raises(ValueError):
        market_driven_allocate(1, [0, 0])


def test_scr_total():
    assert scr_total(29_647_059, 0, 0) == 29_647_059
    assert scr_total(100, -10, 5) == 95
    assert scr_total(0, 0, 0) == 0


def test_redistribute():
    got = redistribute({"motor": 10.0, "fire": 6.0}, {"motor": {"lob1": 1}, "fire": {"lob4": 1, "lob1": 2}})
    assert got == pytest.approx({"lob1": 14.0, "lob4": 2.0})


def test_allocate_dispatch(toy):
    bscr = aggregate_tree(toy).bscr
    for p in ("sfep", "haircut", "marginal", "covariance"):
        res = allocate(toy, p, 1)
        assert res.allocated().sum() == pytest.approx(bscr, rel=1e-12)
    res = allocate(toy, PrincipleSpec("market", drivers={"m1": 1, "m2": 1, "m3": 2}), 1)
    np.testing.assert_allclose(res.allocated(), [bscr / 4, bscr / 4, bscr / 2])
    res = allocate(toy, PrincipleSpec("covariance", covariances={"m1": 1, "m2": 1, "m3": 2}), 1)
    np.testing.assert_allclose(res.allocated(), [bscr / 4, bscr / 4, bscr / 2])
    sub = allocate(toy, "haircut", "m2")
    assert sub.total == pytest.approx(euler_allocate_tree(toy)["m2"].allocated)
    with pytest.raises(ValueError, match="sibling"):
        allocate(toy, "covariance", "leaves")
    with pytest.raises(ValueError, match="antichain"):
        allocate(toy, "haircut", ["m1", "m1_1"])


# --------------------------------------------------------------------------
# properties on random inputs

@st.composite
def level(draw):
    n = draw(st.integers(1, 6))
    s = np.array(draw(st.lists(st.floats(min_value=1e-3, max_value=1e6), min_size=n, max_size=n)))
    p = random_correlation(np.random.default_rng(draw(st.integers(0, 2**32 - 1))), n)
    return s, p


@settings(max_examples=200, deadline=None)
@given(level())
def test_level_full_allocation_and_bounds(sp):
    s, p = sp
    total = aggregate_level(s, p)
    got = euler_allocate_level(s, p, total)
    assert math.fsum(got.allocated) == pytest.approx(total, rel=1e-9)
    assert np.all(got.ratios >= -1e-12) and np.all(got.ratios <= 1 + 1e-12)
    assert np.all(got.allocated <= s * (1 + 1e-12))


@settings(max_examples=200, deadline=None)
@given(level())
def test_covariance_proxy_equals_euler(sp):
    s, p = sp
    total = aggregate_level(s, p)
    np.testing.assert_allclose(covariance_allocate(total, s, p), euler_allocate_level(s, p, total).allocated,
                               rtol=1e-12, atol=1e-12 * total)


@settings(max_examples=100, deadline=None)
@given(level(), st.floats(min_value=1e-2, max_value=1e2))
def test_level_homogeneity(sp, lam):
    s, p = sp
    a, b = euler_allocate_level(s, p), euler_allocate_level(lam * s, p)
    np.testing.assert_allclose(b.allocated, lam * a.allocated, rtol=1e-12)
    np.testing.assert_allclose(b.ratios, a.ratios, rtol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(min_value=0, max_value=1e6), min_size=1, max_size=8), st.floats(min_value=0, max_value=1e7))
def test_haircut_and_market_full_allocation(xs, total):
    if sum(xs) <= 0:
        return
    assert math.fsum(haircut_allocate(xs, total)) == pytest.approx(total, rel=1e-9, abs=1e-9)
    assert math.fsum(market_driven_allocate(total, xs)) == pytest.approx(total, rel=1e-9, abs=1e-9)


def test_tree_properties_random(rng):
    for _ in range(30):
        t = random_tree(rng)
        agg = aggregate_tree(t)
        res = euler_allocate_tree(t, agg)
        for nid in t.internal_nodes():
            assert math.fsum(res[c].allocated for c in t.children(nid)) == pytest.approx(res[nid].allocated, rel=1e-9, abs=1e-12)
            assert agg.scr(nid) <= math.fsum(agg.scr(c) for c in t.children(nid)) * (1 + 1e-12)
        for nid in t.nodes:
            assert -1e-12 <= res[nid].allocation_ratio <= 1 + 1e-12
        for d in range(1, t.height() + 1):
            assert math.fsum(res[n].allocated for n in t.cut(d)) == pytest.approx(agg.bscr, rel=1e-9)


def test_comonotonic_fixed_point(toy):
    como = toy.with_matrices({n: np.ones_like(toy.matrix(n)) for n in toy.internal_nodes()})
    for cut in (1, "leaves"):
        stand = aggregate_tree(como).scrs(como.cut(cut))
        for p in ("sfep", "haircut", "marginal"):
            np.testing.assert_allclose(allocate(como, p, cut).allocated(), stand, rtol=1e-12)
    np.testing.assert_allclose(allocate(como, "covariance", 1).allocated(), [130, 240, 115], rtol=1e-12)
