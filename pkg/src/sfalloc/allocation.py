"""Capital allocation principles for square-root aggregated requirements.

The Euler allocation (SFEP) is closed-form for the square-root scheme: at one
level the allocation ratio of child i is (P s)_i / total, and deeper in the tree
a node receives its standalone requirement times the product of the level
ratios along its root path. Haircut, marginal, covariance and market-driven
allocations are provided for comparison.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from .aggregation import AggregationResult, aggregate_level, aggregate_tree, node_values, propagate
from .model import PrincipleSpec, RiskTree


class LevelAllocation(NamedTuple):
    allocated: np.ndarray
    ratios: np.ndarray


def euler_allocate_level(child_scrs: Sequence[float], corr, parent_total: float | None = None) -> LevelAllocation:
    """Euler allocation of one square-root aggregate among its children.

    allocated_i = s_i * (sum_j rho_ij s_j) / total, where the allocation ratio
    (sum_j rho_ij s_j) / total is the partial derivative of the aggregate with
    respect to s_i. An all-zero level allocates zeros.
    """
    s = np.asarray(child_scrs, dtype=float)
    p = np.asarray(corr, dtype=float)
    if p.ndim != 2 or p.shape != (s.shape[0], s.shape[0]):
        raise ValueError(f"length mismatch: {s.shape[0]} values vs matrix of shape {p.shape}")
    if parent_total is None:
        parent_total = aggregate_level(s, p)
    if parent_total == 0:
        return LevelAllocation(np.zeros_like(s), np.zeros_like(s))
    ratios = (p @ s) / parent_total
    return LevelAllocation(s * ratios, ratios)


@dataclass(frozen=True)
class NodeAllocation:
    allocated: float
    allocation_ratio: float | None = None  # cumulative product of level ratios (SFEP only)
    level_ratio: float | None = None  # d(parent aggregate)/d(this node)
    parent_share: float | None = None  # allocated / allocated(parent)


@dataclass(frozen=True)
class AllocationResult:
    principle: PrincipleSpec
    values: Mapping[str, NodeAllocation]
    total: float
    nodes: tuple[str, ...] = field(default=())

    def __getitem__(self, node_id: str) -> NodeAllocation:
        return self.values[node_id]

    def __iter__(self) -> Iterator[str]:
        return iter(self.values)

    def allocated(self, node_ids: Sequence[str] | None = None) -> np.ndarray:
        ids = self.nodes if node_ids is None else node_ids
        return np.array([self.values[n].allocated for n in ids])


def euler_allocate_tree(tree: RiskTree, agg: AggregationResult | None = None) -> AllocationResult:
    """Top-down SFEP allocation of the root aggregate to every node.

    The root keeps the whole BSCR with ratio 1. Each node's allocated amount is
    its standalone aggregated SCR times the product of the allocation ratios on
    its root path, so siblings always sum to their parent's allocation.
    """
    if agg is None:
        agg = aggregate_tree(tree)
    out = {tree.root: NodeAllocation(agg.bscr, 1.0, 1.0, 1.0)}
    for nid in tree.preorder():
        node = tree.nodes[nid]
        if node.is_leaf:
            continue
        kids = node.children
        level = euler_allocate_level(agg.scrs(kids), tree.matrix(nid), agg.scr(nid))
        parent = out[nid]
        for k, c in enumerate(kids):
            cum = parent.allocation_ratio * level.ratios[k]
            allocated = agg.scr(c) * cum
            share = allocated / parent.allocated if parent.allocated else 0.0
            out[c] = NodeAllocation(allocated, cum, float(level.ratios[k]), share)
    return AllocationResult(PrincipleSpec("sfep"), out, agg.bscr, tuple(tree.preorder()))


def haircut_allocate(standalone: Sequence[float], total: float) -> np.ndarray:
    """Split ``total`` in proportion to the standalone requirements."""
    s = np.asarray(standalone, dtype=float)
    denom = s.sum()
    if denom <= 0:
        raise ValueError("haircut allocation needs a positive sum of standalone requirements")
    return total * s / denom


def marginal_allocate(tree: RiskTree, level_nodes: Sequence[str], total: float | None = None,
                      values: Mapping[str, float] | None = None) -> np.ndarray:
    """Marginal (leave-one-out) allocation over a set of nodes.

    Each node's weight is the drop in the root aggregate when that node's
    requirement is zeroed; the weights are normalised to ``total`` (default:
    the root aggregate).
    """
    if values is None:
        values = node_values(tree)
    root_total = values[tree.root]
    if total is None:
        total = root_total
    if len(level_nodes) == 1:
        return np.array([float(total)])
    marg = np.array([root_total - propagate(tree, values, n, 0.0) for n in level_nodes])
    denom = marg.sum()
    if denom <= 0:
        raise ValueError(f"marginal allocation denominator is {denom:.6g}, must be positive")
    return total * marg / denom


def covariance_allocate(total: float, standalone: Sequence[float] | None = None, corr=None, *,
                        covariances: Sequence[float] | None = None, variance: float | None = None) -> np.ndarray:
    """Covariance principle: total * Cov(X_s, X) / Var(X).

    Without explicit ``covariances`` the standalone SCRs stand in for standard
    deviations, so Cov(X_s, X) is proportional to s_s * (P s)_s and Var(X) to
    the squared square-root aggregate. With explicit covariances, ``variance``
    defaults to their sum.
    """
    if covariances is not None:
        cov = np.asarray(covariances, dtype=float)
        var = float(cov.sum()) if variance is None else float(variance)
    else:
        if standalone is None or corr is None:
            raise ValueError("proxy mode needs standalone requirements and a correlation matrix")
        s = np.asarray(standalone, dtype=float)
        p = np.asarray(corr, dtype=float)
        cov = s * (p @ s)
        var = aggregate_level(s, p) ** 2
    if var == 0:
        raise ValueError("zero variance")
    return total * cov / var


def market_driven_allocate(total: float, drivers: Sequence[float]) -> np.ndarray:
    """Split ``total`` in proportion to non-negative risk drivers."""
    d = np.asarray(drivers, dtype=float)
    if np.any(d < 0):
        raise ValueError("risk drivers must be non-negative")
    denom = d.sum()
    if denom <= 0:
        raise ValueError("market-driven allocation needs a positive driver sum")
    return total * d / denom


def scr_total(bscr: float, adj: float = 0.0, op_risk: float = 0.0) -> float:
    """Overall SCR as BSCR plus adjustment plus operational risk (given scalars)."""
    if op_risk < 0:
        raise ValueError("operational risk requirement must be non-negative")
    return bscr + adj + op_risk


def redistribute(amounts: Mapping[str, float], drivers: Mapping[str, Mapping[str, float]]) -> dict[str, float]:
    """Spread each node's allocated amount over target buckets by market-driven weights.

    ``drivers[node]`` maps bucket -> driver (e.g. LoB -> insured amount). The
    bucket totals are returned.
    """
    out: dict[str, float] = {}
    for nid, amount in amounts.items():
        buckets = drivers[nid]
        split = market_driven_allocate(amount, list(buckets.values()))
        for b, v in zip(buckets, split):
            out[b] = out.get(b, 0.0) + float(v)
    return out


# --------------------------------------------------------------------------
# principle dispatch over a cut of the tree

def _common_parent(tree: RiskTree, node_ids: Sequence[str]) -> str | None:
    parents = {tree.parent(n) for n in node_ids}
    if len(parents) == 1:
        p = parents.pop()
        if p is not None and tuple(node_ids) == tree.children(p):
            return p
    return None


def _check_antichain(tree: RiskTree, node_ids: Sequence[str]) -> None:
    if len(set(node_ids)) != len(node_ids):
        raise ValueError("cut lists a node twice")
    ids = set(node_ids)
    for n in node_ids:
        if n not in tree.nodes:
            raise KeyError(f"unknown node id {n!r}")
        for anc in tree.path(n)[:-1]:
            if anc in ids:
                raise ValueError(f"{anc!r} is an ancestor of {n!r}; a cut must be an antichain")


def cut_total(tree: RiskTree, node_ids: Sequence[str], sfep: AllocationResult | None = None) -> float:
    """Amount a cut shares out: its SFEP allocation (the BSCR for a complete cut)."""
    if sfep is None:
        sfep = euler_allocate_tree(tree)
    return float(math.fsum(sfep[n].allocated for n in node_ids))


def allocate(tree: RiskTree, spec: PrincipleSpec | str, at: str | int | Sequence[str]) -> AllocationResult:
    """Allocate capital to the nodes of a cut under one principle.

    The cut shares out the SFEP allocation of its nodes: the BSCR for a
    complete cut, or the parent's allocated capital for a sibling set. Every
    principle therefore distributes the same total.
    """
    if isinstance(spec, str):
        spec = PrincipleSpec(spec)
    node_ids = list(at) if not isinstance(at, (str, int)) else tree.cut(at)
    _check_antichain(tree, node_ids)
    spec.require(node_ids)
    agg = aggregate_tree(tree)
    sfep = euler_allocate_tree(tree, agg)
    total = cut_total(tree, node_ids, sfep)
    standalone = agg.scrs(node_ids)

    if spec.principle == "sfep":
        values = {n: sfep[n] for n in node_ids}
        return AllocationResult(spec, values, total, tuple(node_ids))
    if spec.principle == "haircut":
        amounts = haircut_allocate(standalone, total)
    elif spec.principle == "marginal":
        vals = {n: agg.scr(n) for n in agg}
        amounts = marginal_allocate(tree, node_ids, total, vals)
    elif spec.principle == "covariance":
        if spec.covariances is not None:
            amounts = covariance_allocate(total, covariances=[spec.covariances[n] for n in node_ids])
        else:
            parent = _common_parent(tree, node_ids)
            if parent is None:
                raise ValueError("covariance proxy needs a complete sibling set (use --at <node-id>)")
            amounts = covariance_allocate(total, standalone, tree.matrix(parent))
    else:
        amounts = market_driven_allocate(total, [spec.drivers[n] for n in node_ids])
    values = {n: NodeAllocation(float(a)) for n, a in zip(node_ids, amounts)}
    return AllocationResult(spec, values, total, tuple(node_ids))
