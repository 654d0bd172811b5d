import numpy as np
import pytest

from sfalloc import aggregate_tree, parse_tree, serialize_tree
from sfalloc.diagnostics import (
    PROPERTY_NAMES,
    all_passed,
    compare_principles,
    perturb_tree,
    random_tree,
    run_property_suite,
)
from sfalloc.model import CorrelationMatrix, RiskTree


def test_compare_modules(toy):
    rep = compare_principles(toy, ["sfep", "marginal", "haircut"], 1)
    assert rep.nodes == ["m1", "m2", "m3"]
    np.testing.assert_allclose(100 * rep.deviation("haircut"), [39.22, -24.60, 56.30], atol=0.05)
    np.testing.assert_allclose(100 * rep.deviation("marginal"), [-11.27, 6.16, -12.27], atol=0.05)
    totals = rep.column_totals()
    for p in rep.principles:
        assert totals[p] == pytest.approx(aggregate_tree(toy).bscr, rel=1e-9)


def test_compare_single_principle(toy):
    rep = compare_principles(toy, ["sfep"], "leaves")
    assert rep.principles == ["sfep"]
    assert np.all(rep.deviation("sfep") == 0)


def test_compare_adds_sfep_baseline(toy):
    rep = compare_principles(toy, ["haircut"], 1)
    assert rep.principles == ["sfep", "haircut"]
    assert set(rep.rows[0]) >= {"node", "standalone", "sfep", "haircut", "haircut_vs_sfep"}


def test_compare_sibling_cut_sums_to_parent_allocation(nonlife):
    rep = compare_principles(nonlife, ["sfep", "haircut", "marginal", "covariance"], "nonlife")
    totals = rep.column_totals()
    assert len(set(round(v, 6) for v in totals.values())) == 1
    np.testing.assert_allclose(rep.allocations["covariance"], rep.allocations["sfep"], rtol=1e-12)


def test_suite_passes_on_toy(toy):
    findings = run_property_suite(toy, seed=3, trials=20)
    assert [f.name for f in findings] == list(PROPERTY_NAMES)
    assert all_passed(findings), [str(f) for f in findings if not f.passed]
    assert all(f.status == "pass" for f in findings)


def test_suite_deterministic(toy):
    a = [str(f) for f in run_property_suite(toy, seed=11, trials=5)]
    b = [str(f) for f in run_property_suite(toy, seed=11, trials=5)]
    assert a == b


def test_suite_reports_validation_failure(toy):
    doc = serialize_tree(toy)
    m = np.array(doc["matrices"]["m2"])
    m[0, 1] = 0.3
    broken = RiskTree(toy.root, toy.nodes, {**toy.matrices, "m2": CorrelationMatrix(m)})
    findings = run_property_suite(broken, seed=0, trials=5)
    assert [f.name for f in findings] == ["validation"]
    assert findings[0].status == "fail" and "asymmetric" in findings[0].detail


def test_suite_comonotonic_tree(toy):
    como = toy.with_matrices({n: np.ones_like(toy.matrix(n)) for n in toy.internal_nodes()})
    findings = {f.name: f for f in run_property_suite(como, seed=1, trials=0)}
    assert findings["comonotonic fixed point"].status == "pass"
    assert aggregate_tree(como).bscr == pytest.approx(485)


def test_suite_detects_broken_allocation(toy, monkeypatch):
    import sfalloc.diagnostics as diag

    real = diag.euler_allocate_level

    def skewed(s, p, total=None):
        out = real(s, p, total)
        return out._replace(allocated=out.allocated * 1.01)

    monkeypatch.setattr(diag, "euler_allocate_level", skewed)
    findings = {f.name: f for f in run_property_suite(toy, seed=0, trials=0)}
    assert findings["euler gradient (level)"].status == "fail"
    assert findings["euler gradient (level)"].counterexample["node"] == "bscr"


def test_suite_skips_bounds_with_negative_correlation():
    t = parse_tree({"root": "r", "nodes": [{"id": "r", "name": "r", "children": ["a", "b"]},
                                            {"id": "a", "name": "a", "scr": 3}, {"id": "b", "name": "b", "scr": 4}],
                    "matrices": {"r": [[1, -0.3], [-0.3, 1]]}})
    findings = {f.name: f for f in run_property_suite(t, seed=0, trials=3)}
    # perturbed trials replace the negative matrix, so the bounds still get exercised there
    assert findings["allocation ratio bounds"].status == "pass"
    findings0 = {f.name: f for f in run_property_suite(t, seed=0, trials=0)}
    assert findings0["allocation ratio bounds"].status == "skip"


def test_random_tree_shape(rng):
    for _ in range(50):
        t = random_tree(rng)
        assert t.height() <= 4
        assert all(len(t.children(n)) <= 6 for n in t.internal_nodes())
        for n in t.internal_nodes():
            m = t.matrix(n)
            assert np.all((m >= 0) & (m <= 1))
            assert np.linalg.eigvalsh(m).min() >= -1e-12


def test_perturb_keeps_range_and_psd(toy, rng):
    for _ in range(20):
        t = perturb_tree(toy, rng)
        for n in t.internal_nodes():
            m = t.matrix(n)
            assert np.all((m >= 0) & (m <= 1)) and np.allclose(np.diag(m), 1)
            assert np.linalg.eigvalsh(m).min() >= -1e-12
