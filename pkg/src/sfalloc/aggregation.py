"""Square-root aggregation of capital requirements over a risk tree."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from .model import CorrelationMatrix, RiskTree

# Quadratic forms within this relative distance below zero are round-off, not indefiniteness.
_ROUNDOFF = 1e-12


class IndefiniteAggregationError(ArithmeticError):
    """The quadratic form s'Ps is negative, so no real aggregate exists."""

    def __init__(self, value: float, node: str | None = None):
        self.value = value
        self.node = node
        where = f" at node {node!r}" if node is not None else ""
        super().__init__(f"indefinite aggregation{where}: quadratic form = {value:.6g}")


def _quadratic_form(s: np.ndarray, corr: np.ndarray, node: str | None = None) -> float:
    q = float(s @ corr @ s)
    if q < 0:
        scale = float(np.abs(s) @ np.abs(corr) @ np.abs(s))
        if q < -_ROUNDOFF * scale:
            raise IndefiniteAggregationError(q, node)
        q = 0.0
    return q


def _check_shapes(s: np.ndarray, corr: np.ndarray) -> None:
    if corr.ndim != 2 or corr.shape[0] != corr.shape[1] or corr.shape[0] != s.shape[0]:
        raise ValueError(f"length mismatch: {s.shape[0]} values vs matrix of shape {corr.shape}")


def aggregate_level(child_scrs: Sequence[float], corr) -> float:
    """Aggregate capital requirements with the square-root formula sqrt(s' P s).

    Args:
        child_scrs: standalone requirements, ordered like the matrix rows.
        corr: correlation matrix (array-like or CorrelationMatrix).

    Raises:
        IndefiniteAggregationError: if s'Ps < 0 beyond round-off.
    """
    s = np.asarray(child_scrs, dtype=float)
    p = np.asarray(corr, dtype=float)
    _check_shapes(s, p)
    return math.sqrt(_quadratic_form(s, p))


class NodeAggregate(NamedTuple):
    aggregated_scr: float
    diversification_effect: float


@dataclass(frozen=True)
class AggregationResult:
    root: str
    values: Mapping[str, NodeAggregate]

    @property
    def bscr(self) -> float:
        return self.values[self.root].aggregated_scr

    def __getitem__(self, node_id: str) -> NodeAggregate:
        return self.values[node_id]

    def __iter__(self) -> Iterator[str]:
        return iter(self.values)

    def scr(self, node_id: str) -> float:
        return self.values[node_id].aggregated_scr

    def scrs(self, node_ids: Sequence[str]) -> np.ndarray:
        return np.array([self.values[n].aggregated_scr for n in node_ids])


def node_values(tree: RiskTree, overrides: Mapping[str, float] | None = None) -> dict[str, float]:
    """Aggregated SCR of every node, evaluated bottom-up.

    ``overrides`` pins the value of any node (leaf or internal) before its
    ancestors are evaluated.
    """
    overrides = overrides or {}
    values: dict[str, float] = {}
    for nid in tree.postorder():
        if nid in overrides:
            values[nid] = float(overrides[nid])
            continue
        node = tree.nodes[nid]
        if node.is_leaf:
            values[nid] = float(node.standalone_scr)
        else:
            s = np.array([values[c] for c in node.children])
            values[nid] = math.sqrt(_quadratic_form(s, tree.matrix(nid), nid))
    return values


def propagate(tree: RiskTree, values: Mapping[str, float], node_id: str, new_value: float) -> float:
    """Root aggregate after replacing one node's value, recomputing only its ancestors."""
    changed = {node_id: float(new_value)}
    nid = node_id
    while (parent := tree.parent(nid)) is not None:
        kids = tree.children(parent)
        s = np.array([changed.get(c, values[c]) for c in kids])
        changed[parent] = math.sqrt(_quadratic_form(s, tree.matrix(parent), parent))
        nid = parent
    return changed[nid]


def aggregate_tree(tree: RiskTree) -> AggregationResult:
    """Nested bottom-up aggregation; the root value is the BSCR.

    Every internal node also carries its diversification effect, the sum of its
    children's aggregated requirements minus its own.
    """
    values = node_values(tree)
    out = {}
    for nid in tree.preorder():
        node = tree.nodes[nid]
        if node.is_leaf:
            out[nid] = NodeAggregate(values[nid], 0.0)
        else:
            out[nid] = NodeAggregate(values[nid], diversification_effect([values[c] for c in node.children], values[nid]))
    return AggregationResult(tree.root, out)


def diversification_effect(child_scrs: Sequence[float], aggregated: float) -> float:
    """Sum of standalone requirements minus the aggregated requirement."""
    return float(math.fsum(child_scrs) - aggregated)


def leaf_order(tree: RiskTree) -> list[str]:
    """Canonical (depth-first document) ordering of leaves for full base matrices."""
    return tree.leaves()


def aggregate_full_base(leaf_scrs: Sequence[float], base_matrix) -> float:
    """Genuine one-step aggregation sqrt(A' B A) over all leaves at once."""
    return aggregate_level(leaf_scrs, base_matrix)


def block_diagonal_base(tree: RiskTree) -> np.ndarray:
    """Full base matrix that keeps only correlations between sibling leaves.

    Entries between leaves with different parents are zero. Nested and genuine
    aggregation coincide for a tree whose matrices have no other non-zero
    off-diagonal entries (see ``leaf_block_tree``).
    """
    leaves = tree.leaves()
    pos = {nid: k for k, nid in enumerate(leaves)}
    b = np.eye(len(leaves))
    for nid in tree.internal_nodes():
        kids = tree.children(nid)
        m = tree.matrix(nid)
        for i, a in enumerate(kids):
            for j, c in enumerate(kids):
                if a in pos and c in pos:
                    b[pos[a], pos[c]] = m[i, j]
    return b


def leaf_block_tree(tree: RiskTree) -> RiskTree:
    """Copy of ``tree`` with every correlation involving an internal node set to zero."""
    mats = {}
    for nid in tree.internal_nodes():
        kids = tree.children(nid)
        m = np.array(tree.matrix(nid))
        internal = np.array([not tree.is_leaf(c) for c in kids])
        mask = internal[:, None] | internal[None, :]
        m[mask] = 0.0
        np.fill_diagonal(m, 1.0)
        mats[nid] = CorrelationMatrix(m)
    return tree.with_matrices(mats)


def aggregate_excluding(tree: RiskTree, excluded: str, values: Mapping[str, float] | None = None) -> float:
    """Root aggregate with one node's requirement set to zero inside its parent.

    Raises:
        KeyError: for an unknown node id.
        ValueError: when asked to exclude the root.
    """
    if excluded not in tree.nodes:
        raise KeyError(f"unknown node id {excluded!r}")
    if excluded == tree.root:
        raise ValueError("cannot exclude the root")
    if values is None:
        values = node_values(tree)
    return propagate(tree, values, excluded, 0.0)


class Calibration(NamedTuple):
    rho: float
    clamped: bool
    raw: float


def calibrate_rho(var_x: float, var_y: float, var_xy: float) -> Calibration:
    """Correlation that makes two-risk square-root aggregation reproduce VaR(X+Y).

    Solves VaR(X+Y)^2 = VaR(X)^2 + VaR(Y)^2 + 2 rho VaR(X) VaR(Y) for rho,
    which zeroes the absolute aggregation error. Values outside [-1, 1] are
    clamped and flagged.
    """
    if var_x <= 0 or var_y <= 0:
        raise ValueError(f"zero marginal VaR: var_x={var_x}, var_y={var_y}")
    raw = (var_xy * var_xy - var_x * var_x - var_y * var_y) / (2.0 * var_x * var_y)
    rho = min(1.0, max(-1.0, raw))
    return Calibration(rho, rho != raw, raw)
