"""Cross-principle comparison and property checks for aggregation and allocation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import mpmath
import numpy as np

from .aggregation import (
    aggregate_full_base,
    aggregate_level,
    aggregate_tree,
    block_diagonal_base,
    calibrate_rho,
    leaf_block_tree,
)
from .allocation import (
    allocate,
    covariance_allocate,
    euler_allocate_level,
    euler_allocate_tree,
    haircut_allocate,
    marginal_allocate,
)
from .model import CorrelationMatrix, PrincipleSpec, RiskNode, RiskTree, errors, validate_tree

FULL_ALLOCATION_TOL = 1e-9
GRADIENT_TOL = 1e-6
EXACT_TOL = 1e-12


# --------------------------------------------------------------------------
# principle comparison

@dataclass
class ComparisonReport:
    nodes: list[str]
    principles: list[str]
    allocations: dict[str, np.ndarray]
    total: float
    standalone: np.ndarray
    names: list[str] = field(default_factory=list)

    def deviation(self, principle: str) -> np.ndarray:
        """allocated_p / allocated_sfep - 1 (NaN where SFEP allocates zero)."""
        base = self.allocations["sfep"]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(base != 0, self.allocations[principle] / base - 1.0, np.nan)

    def column_totals(self) -> dict[str, float]:
        return {p: float(math.fsum(self.allocations[p])) for p in self.principles}

    @property
    def rows(self) -> list[dict[str, Any]]:
        out = []
        for k, nid in enumerate(self.nodes):
            row: dict[str, Any] = {"node": nid, "standalone": float(self.standalone[k])}
            for p in self.principles:
                row[p] = float(self.allocations[p][k])
            for p in self.principles:
                if p != "sfep":
                    row[f"{p}_vs_sfep"] = float(self.deviation(p)[k])
            out.append(row)
        return out


def compare_principles(tree: RiskTree, principles: Sequence[PrincipleSpec | str],
                       level: str | int | Sequence[str]) -> ComparisonReport:
    """Allocate the same cut under several principles; deviations are measured against SFEP."""
    specs = [PrincipleSpec(p) if isinstance(p, str) else p for p in principles]
    names = [s.principle for s in specs]
    if "sfep" not in names:
        specs.insert(0, PrincipleSpec("sfep"))
        names.insert(0, "sfep")
    node_ids = list(level) if not isinstance(level, (str, int)) else tree.cut(level)
    agg = aggregate_tree(tree)
    allocations = {}
    total = None
    for spec in specs:
        res = allocate(tree, spec, node_ids)
        allocations[spec.principle] = res.allocated(node_ids)
        total = res.total
    return ComparisonReport(node_ids, names, allocations, float(total), agg.scrs(node_ids),
                            [tree.nodes[n].name for n in node_ids])


# --------------------------------------------------------------------------
# random trees and perturbations

def random_correlation(rng: np.random.Generator, n: int) -> np.ndarray:
    """Random PSD correlation matrix with entries in [0, 1].

    Built as the normalised Gram matrix of non-negative vectors; a third of
    the draws are the identity or all-ones to exercise the boundary cases.
    """
    kind = rng.integers(0, 6)
    if kind == 0:
        return np.eye(n)
    if kind == 1:
        return np.ones((n, n))
    v = rng.random((n, int(rng.integers(1, n + 2))))
    v[rng.random(v.shape) < 0.3] = 0.0
    v[np.all(v == 0, axis=1), 0] = 1.0
    g = v @ v.T
    d = np.sqrt(np.diag(g))
    p = g / np.outer(d, d)
    p = np.clip((p + p.T) / 2, 0.0, 1.0)
    np.fill_diagonal(p, 1.0)
    return p


def random_tree(rng: np.random.Generator, max_depth: int = 4, max_fanout: int = 6,
                scr_range: tuple[float, float] = (1.0, 1000.0)) -> RiskTree:
    """Random valid tree with depth <= max_depth, fanout <= max_fanout and rho in [0, 1]."""
    nodes: dict[str, RiskNode] = {}
    matrices: dict[str, CorrelationMatrix] = {}
    lo, hi = np.log(scr_range[0]), np.log(scr_range[1])
    counter = [0]

    def build(depth: int) -> str:
        nid = f"n{counter[0]}"
        counter[0] += 1
        internal = depth == 0 or (depth < max_depth and rng.random() < 0.55 / depth)
        if not internal:
            scr = 0.0 if rng.random() < 0.05 else float(np.exp(rng.uniform(lo, hi)))
            nodes[nid] = RiskNode(nid, nid, (), scr)
            return nid
        k = int(rng.integers(1, max_fanout + 1))
        kids = tuple(build(depth + 1) for _ in range(k))
        nodes[nid] = RiskNode(nid, nid, kids)
        matrices[nid] = CorrelationMatrix(random_correlation(rng, k))
        return nid

    root = build(0)
    return RiskTree(root, nodes, matrices)


def _nonneg_psd(m: np.ndarray) -> bool:
    return bool(np.all(m >= 0)) and (m.shape[0] == 1 or np.linalg.eigvalsh(m).min() >= -1e-12)


def perturb_tree(tree: RiskTree, rng: np.random.Generator) -> RiskTree:
    """Scale every leaf by a random factor and jitter correlations inside [0, 1].

    Jitter blends each matrix with a random non-negative PSD matrix, which keeps
    the result PSD; matrices with negative or indefinite entries are replaced.
    """
    leaves = {n: v * float(np.exp(rng.uniform(-0.7, 0.7))) for n, v in tree.leaf_scrs().items()}
    mats = {}
    for nid in tree.internal_nodes():
        m = tree.matrix(nid)
        q = random_correlation(rng, m.shape[0])
        if not _nonneg_psd(m):
            m = np.eye(m.shape[0])
        t = rng.uniform(0.0, 0.5)
        p = (1 - t) * m + t * q
        np.fill_diagonal(p, 1.0)
        mats[nid] = CorrelationMatrix(p)
    return tree.with_leaf_scrs(leaves).with_matrices(mats)


# --------------------------------------------------------------------------
# finite-difference oracle (high precision so round-off does not mask the check)

_FD_DPS = 40


def _mp_level(s: Sequence, p: np.ndarray):
    n = len(s)
    q = mpmath.fsum(mpmath.mpf(s[i]) * mpmath.mpf(s[j]) * mpmath.mpf(float(p[i, j]))
                    for i in range(n) for j in range(n))
    return mpmath.sqrt(q)


def fd_level_gradient(s: Sequence[float], p: np.ndarray, i: int, rel_step: float = 1e-6) -> float:
    """Central difference of the square-root aggregate in its i-th argument."""
    with mpmath.workdps(_FD_DPS):
        h = rel_step * s[i]
        up = [mpmath.mpf(x) for x in s]
        dn = list(up)
        up[i] += h
        dn[i] -= h
        return float((_mp_level(up, p) - _mp_level(dn, p)) / (2 * h))


def fd_tree_gradient(tree: RiskTree, values: dict[str, float], leaf: str, rel_step: float = 1e-6) -> float:
    """Central difference of the root aggregate in one leaf's requirement."""
    h = rel_step * values[leaf]

    def root_with(x):
        changed = {leaf: x}
        nid = leaf
        while (parent := tree.parent(nid)) is not None:
            kids = tree.children(parent)
            changed[parent] = _mp_level([changed.get(c, values[c]) for c in kids], tree.matrix(parent))
            nid = parent
        return changed[nid]

    with mpmath.workdps(_FD_DPS):
        x = mpmath.mpf(values[leaf])
        return float((root_with(x + h) - root_with(x - h)) / (2 * h))


# --------------------------------------------------------------------------
# property suite

@dataclass
class PropertyFinding:
    name: str
    status: str  # "pass", "fail" or "skip"
    checks: int = 0
    max_error: float = 0.0
    detail: str = ""
    counterexample: dict[str, Any] | None = None

    @property
    def passed(self) -> bool:
        return self.status != "fail"

    def __str__(self) -> str:
        s = f"{self.status.upper():4s} {self.name} ({self.checks} checks, max error {self.max_error:.3g})"
        if self.detail:
            s += f": {self.detail}"
        return s


class _Recorder:
    """Accumulates check outcomes per property."""

    def __init__(self):
        self.findings: dict[str, PropertyFinding] = {}

    def check(self, name: str, ok: bool, error: float = 0.0, **context) -> None:
        f = self.findings.setdefault(name, PropertyFinding(name, "skip"))
        f.checks += 1
        if math.isfinite(error):
            f.max_error = max(f.max_error, error)
        if f.status == "skip":
            f.status = "pass"
        if not ok and f.status != "fail":
            f.status = "fail"
            f.counterexample = {k: _jsonable(v) for k, v in context.items()}

    def skip(self, name: str, why: str) -> None:
        f = self.findings.setdefault(name, PropertyFinding(name, "skip"))
        if f.status == "skip" and not f.detail:
            f.detail = why


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def _rel(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return abs(a - b) / scale if scale else 0.0


PROPERTY_NAMES = (
    "full allocation",
    "euler gradient (level)",
    "euler gradient (tree)",
    "homogeneity",
    "subadditivity",
    "diversification effect non-negative",
    "monotonicity in correlations",
    "allocation within standalone sum",
    "allocation ratio bounds",
    "covariance proxy equals sfep",
    "comonotonic fixed point",
    "nested equals genuine (block base)",
    "calibrate_rho inverse",
)


def check_tree(tree: RiskTree, rng: np.random.Generator, rec: _Recorder, label: str = "tree") -> None:
    """Run every aggregation/allocation invariant on one tree."""
    agg = aggregate_tree(tree)
    values = {n: agg.scr(n) for n in agg}
    bscr = agg.bscr
    sfep = euler_allocate_tree(tree, agg)
    all_nonneg_psd = all(_nonneg_psd(tree.matrix(n)) for n in tree.internal_nodes())

    # full allocation: every parent equals the sum of its children, every depth cut sums to the BSCR
    for nid in tree.internal_nodes():
        kids = tree.children(nid)
        s = math.fsum(sfep[c].allocated for c in kids)
        err = _rel(s, sfep[nid].allocated)
        rec.check("full allocation", err <= FULL_ALLOCATION_TOL, err, tree=label, node=nid, principle="sfep")
    for d in range(1, tree.height() + 1):
        cut = tree.cut(d)
        s = math.fsum(sfep[c].allocated for c in cut)
        err = _rel(s, bscr)
        rec.check("full allocation", err <= FULL_ALLOCATION_TOL, err, tree=label, depth=d, principle="sfep")
    if bscr > 0:
        for cut_sel in (1, "leaves"):
            cut = tree.cut(cut_sel)
            stand = agg.scrs(cut)
            if stand.sum() > 0:
                hc = haircut_allocate(stand, bscr)
                err = _rel(math.fsum(hc), bscr)
                rec.check("full allocation", err <= FULL_ALLOCATION_TOL, err, tree=label, cut=str(cut_sel), principle="haircut")
            try:
                mg = marginal_allocate(tree, cut, bscr, values)
            except ValueError:
                continue
            err = _rel(math.fsum(mg), bscr)
            rec.check("full allocation", err <= FULL_ALLOCATION_TOL, err, tree=label, cut=str(cut_sel), principle="marginal")

    # per-level checks
    for nid in tree.internal_nodes():
        kids = tree.children(nid)
        s = agg.scrs(kids)
        p = tree.matrix(nid)
        total = values[nid]
        level = euler_allocate_level(s, p, total)
        if total > 0:
            for i in range(len(kids)):
                if s[i] <= 0:
                    continue
                lhs = level.allocated[i] / total
                rhs = s[i] * fd_level_gradient(s, p, i) / total
                err = _rel(lhs, rhs)
                rec.check("euler gradient (level)", err <= GRADIENT_TOL, err, tree=label, node=nid, child=kids[i])
            cov = covariance_allocate(total, s, p)
            err = max(_rel(a, b) for a, b in zip(cov, level.allocated))
            rec.check("covariance proxy equals sfep", err <= EXACT_TOL, err, tree=label, node=nid)
        excess = total - math.fsum(s)
        rec.check("subadditivity", excess <= EXACT_TOL * max(total, 1.0), max(excess, 0.0), tree=label, node=nid)
        de = agg[nid].diversification_effect
        rec.check("diversification effect non-negative", de >= -EXACT_TOL * max(total, 1.0), max(-de, 0.0),
                  tree=label, node=nid)
        if all_nonneg_psd:
            # parent = sum of its level allocations <= sum of children standalone
            lvl_err = _rel(math.fsum(level.allocated), total)
            ok = lvl_err <= FULL_ALLOCATION_TOL and total <= math.fsum(s) * (1 + EXACT_TOL)
            rec.check("allocation within standalone sum", ok, lvl_err, tree=label, node=nid, aggregated=total, children=s)
            viol = np.maximum(level.ratios - 1.0, -level.ratios)
            worst = float(viol.max(initial=0.0))
            rec.check("allocation ratio bounds", worst <= EXACT_TOL, max(worst, 0.0),
                      tree=label, node=nid, ratios=level.ratios)
        else:
            rec.skip("allocation within standalone sum", "negative or indefinite correlations present")
            rec.skip("allocation ratio bounds", "negative or indefinite correlations present")
        # monotonicity: raise one off-diagonal pair toward 1
        n = len(kids)
        if n > 1 and np.all(s >= 0):
            i, j = sorted(rng.choice(n, 2, replace=False))
            q = np.array(p)
            q[i, j] = q[j, i] = min(1.0, q[i, j] + rng.uniform(0, 1 - q[i, j]) if q[i, j] < 1 else 1.0)
            bumped = aggregate_level(s, q)
            rec.check("monotonicity in correlations", bumped >= total * (1 - EXACT_TOL), max(total - bumped, 0.0),
                      tree=label, node=nid, pair=[int(i), int(j)])

    if all_nonneg_psd:
        bad = [n for n in tree.preorder() if sfep[n].allocation_ratio > 1 + EXACT_TOL or sfep[n].allocation_ratio < -EXACT_TOL]
        rec.check("allocation ratio bounds", not bad, 0.0, tree=label, nodes=bad[:5])

    # tree gradient: allocated leaf / BSCR == s * d BSCR / d s / BSCR (chain rule through all levels)
    if bscr > 0:
        for leaf in tree.leaves():
            if values[leaf] <= 0 or leaf == tree.root:
                continue
            fd = fd_tree_gradient(tree, values, leaf)
            ar = sfep[leaf].allocation_ratio
            err = abs(ar - fd)
            rec.check("euler gradient (tree)", err <= GRADIENT_TOL, err, tree=label, leaf=leaf, analytic=ar, fd=fd)

    # homogeneity
    lam = float(np.exp(rng.uniform(np.log(0.1), np.log(10.0))))
    scaled = tree.scaled(lam)
    sagg = aggregate_tree(scaled)
    ssfep = euler_allocate_tree(scaled, sagg)
    err = 0.0
    for n in tree.preorder():
        err = max(err, _rel(sagg.scr(n), lam * agg.scr(n)), _rel(ssfep[n].allocated, lam * sfep[n].allocated))
        if bscr > 0 and values[n] > 0:
            err = max(err, _rel(ssfep[n].allocation_ratio, sfep[n].allocation_ratio))
    rec.check("homogeneity", err <= EXACT_TOL, err, tree=label, factor=lam)

    # comonotonic fixed point
    if not tree.is_leaf(tree.root):
        como = tree.with_matrices({n: np.ones_like(tree.matrix(n)) for n in tree.internal_nodes()})
        cagg = aggregate_tree(como)
        if cagg.bscr > 0:
            for cut_sel in (1, "leaves"):
                cut = como.cut(cut_sel)
                stand = cagg.scrs(cut)
                err = 0.0
                for principle in ("sfep", "haircut", "marginal"):
                    got = allocate(como, principle, cut).allocated(cut)
                    err = max(err, float(np.max(np.abs(got - stand))) / cagg.bscr)
                if cut_sel == 1:
                    got = covariance_allocate(cagg.bscr, stand, como.matrix(como.root))
                    err = max(err, float(np.max(np.abs(got - stand))) / cagg.bscr)
                rec.check("comonotonic fixed point", err <= EXACT_TOL, err, tree=label, cut=str(cut_sel))

    # nested == genuine with a block-diagonal base matrix
    blk = leaf_block_tree(tree)
    nested = aggregate_tree(blk).bscr
    leaves = blk.leaves()
    genuine = aggregate_full_base([blk.nodes[n].standalone_scr for n in leaves], block_diagonal_base(blk))
    err = _rel(nested, genuine)
    rec.check("nested equals genuine (block base)", err <= EXACT_TOL * 10, err, tree=label)

    # calibrate_rho inverse
    a, b = np.exp(rng.uniform(0, np.log(1000.0), 2))
    rho = float(rng.uniform(-1, 1))
    agg2 = aggregate_level([a, b], [[1, rho], [rho, 1]])
    got = calibrate_rho(a, b, agg2).rho
    err = abs(got - rho) / max(1.0, abs(rho))
    rec.check("calibrate_rho inverse", err <= EXACT_TOL, err, a=a, b=b, rho=rho)


def run_property_suite(tree: RiskTree, seed: int = 0, trials: int = 100) -> list[PropertyFinding]:
    """Check every invariant on ``tree`` and on ``trials`` random perturbations of it.

    The result is deterministic for a given (tree, seed, trials). A tree that
    fails validation is reported as validation findings and not checked further.
    """
    problems = errors(validate_tree(tree))
    if problems:
        return [PropertyFinding("validation", "fail", 1, 0.0, str(f), {"node": f.node, "code": f.code}) for f in problems]
    rng = np.random.default_rng(seed)
    rec = _Recorder()
    check_tree(tree, rng, rec, "input")
    for k in range(trials):
        check_tree(perturb_tree(tree, rng), rng, rec, f"trial {k}")
    return [rec.findings.get(n, PropertyFinding(n, "skip", detail="not applicable")) for n in PROPERTY_NAMES]


def all_passed(findings: Sequence[PropertyFinding]) -> bool:
    return all(f.passed for f in findings)
