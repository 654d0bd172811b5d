"""Risk-tree data model: nodes, correlation matrices, parsing and validation.

A risk tree describes a multilevel square-root aggregation scheme. Leaves carry
standalone capital requirements supplied by the user; every internal node owns a
correlation matrix whose k-th row/column refers to its k-th child.

The document format is JSON::

    {"root": "bscr",
     "nodes": [{"id": "bscr", "name": "BSCR", "children": ["mkt", "nl"]},
               {"id": "mkt", "name": "Market", "scr": 6112345},
               ...],
     "matrices": {"bscr": [[1, 0.25], [0.25, 1]]},
     "notes": {"bscr": "free text, ignored by the engine"}}
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

import numpy as np

PRINCIPLES = ("sfep", "haircut", "marginal", "covariance", "market")

_PSD_TOL = 1e-10


@dataclass(frozen=True)
class Finding:
    """A validation finding. ``level`` is ``"error"`` or ``"warning"``."""

    level: str
    code: str
    message: str
    node: str | None = None

    def __str__(self) -> str:
        return f"{self.level}: {self.code}: {self.message}"


class TreeError(ValueError):
    """Raised when a tree document cannot be turned into a valid RiskTree."""

    def __init__(self, findings: Sequence[Finding]):
        self.findings = list(findings)
        errors = [f for f in self.findings if f.level == "error"]
        super().__init__("; ".join(f"{f.code}: {f.message}" for f in errors) or "invalid tree")


@dataclass(frozen=True)
class RiskNode:
    id: str
    name: str
    children: tuple[str, ...] = ()
    standalone_scr: float | None = None
    driver: float | None = None

    @property
    def kind(self) -> str:
        return "internal" if self.children else "leaf"

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """Square correlation matrix ordering the children of one internal node."""

    entries: np.ndarray

    def __post_init__(self):
        arr = np.array(self.entries, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def order(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.entries
        return self.entries.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, CorrelationMatrix):
            return NotImplemented
        return self.entries.shape == other.entries.shape and np.array_equal(self.entries, other.entries)

    __hash__ = None

    def tolist(self) -> list[list[float]]:
        return self.entries.tolist()


@dataclass(frozen=True)
class RiskTree:
    root: str
    nodes: Mapping[str, RiskNode]
    matrices: Mapping[str, CorrelationMatrix] = field(default_factory=dict)
    notes: Mapping[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        parents: dict[str, str] = {}
        for node in self.nodes.values():
            for child in node.children:
                parents.setdefault(child, node.id)
        object.__setattr__(self, "_parents", parents)

    def __getitem__(self, node_id: str) -> RiskNode:
        return self.nodes[node_id]

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.nodes

    def children(self, node_id: str) -> tuple[str, ...]:
        return self.nodes[node_id].children

    def parent(self, node_id: str) -> str | None:
        return self._parents.get(node_id)

    def is_leaf(self, node_id: str) -> bool:
        return self.nodes[node_id].is_leaf

    def matrix(self, node_id: str) -> np.ndarray:
        return self.matrices[node_id].entries

    def path(self, node_id: str) -> list[str]:
        """Node ids from the root down to ``node_id`` inclusive."""
        out = [node_id]
        while (p := self.parent(out[-1])) is not None:
            out.append(p)
        return out[::-1]

    def depth(self, node_id: str) -> int:
        return len(self.path(node_id)) - 1

    def preorder(self) -> Iterator[str]:
        stack = [self.root]
        while stack:
            nid = stack.pop()
            yield nid
            stack.extend(reversed(self.nodes[nid].children))

    def postorder(self) -> list[str]:
        return list(reversed([n for n in self._reverse_preorder()]))

    def _reverse_preorder(self) -> Iterator[str]:
        # root, then children right-to-left; reversing gives a post-order
        stack = [self.root]
        while stack:
            nid = stack.pop()
            yield nid
            stack.extend(self.nodes[nid].children)

    def leaves(self) -> list[str]:
        """Leaf ids in depth-first document order (the canonical leaf order)."""
        return [n for n in self.preorder() if self.nodes[n].is_leaf]

    def internal_nodes(self) -> list[str]:
        return [n for n in self.preorder() if not self.nodes[n].is_leaf]

    def height(self) -> int:
        return max(self.depth(n) for n in self.leaves())

    def leaf_scrs(self) -> dict[str, float]:
        return {n: self.nodes[n].standalone_scr for n in self.leaves()}

    def cut(self, at: str | int) -> list[str]:
        """Resolve a cut selector into an antichain of node ids.

        ``at`` may be an integer depth (or a string of digits), ``"root"``,
        ``"leaves"``, or a node id. A depth ``d`` yields every node at depth
        ``d`` plus shallower leaves, so the cut is complete and sums to the
        root. A node id yields that node's children (or the node itself when
        it is a leaf).
        """
        if isinstance(at, str) and at.isdigit() and at not in self.nodes:
            at = int(at)
        if isinstance(at, int):
            if at < 0:
                raise ValueError(f"negative depth {at}")
            return [n for n in self.preorder()
                    if self.depth(n) == at or (self.nodes[n].is_leaf and self.depth(n) < at)]
        if at == "root":
            return [self.root]
        if at == "leaves":
            return self.leaves()
        if at not in self.nodes:
            raise KeyError(f"unknown node id {at!r}")
        node = self.nodes[at]
        return list(node.children) if node.children else [at]

    def with_leaf_scrs(self, values: Mapping[str, float]) -> "RiskTree":
        nodes = dict(self.nodes)
        for nid, v in values.items():
            n = nodes[nid]
            if not n.is_leaf:
                raise ValueError(f"node {nid!r} is not a leaf")
            nodes[nid] = RiskNode(n.id, n.name, n.children, float(v), n.driver)
        return RiskTree(self.root, nodes, self.matrices, self.notes)

    def with_matrices(self, matrices: Mapping[str, Any]) -> "RiskTree":
        merged = dict(self.matrices)
        for nid, m in matrices.items():
            merged[nid] = m if isinstance(m, CorrelationMatrix) else CorrelationMatrix(m)
        return RiskTree(self.root, self.nodes, merged, self.notes)

    def scaled(self, factor: float) -> "RiskTree":
        return self.with_leaf_scrs({n: factor * v for n, v in self.leaf_scrs().items()})


@dataclass(frozen=True)
class PrincipleSpec:
    """Selects an allocation principle and carries its parameters."""

    principle: str = "sfep"
    drivers: Mapping[str, float] | None = None
    covariances: Mapping[str, float] | None = None

    def __post_init__(self):
        if self.principle not in PRINCIPLES:
            raise ValueError(f"unknown principle {self.principle!r}; expected one of {PRINCIPLES}")

    def require(self, node_ids: Sequence[str]) -> None:
        """Raise if the parameter maps needed by the principle miss a node."""
        if self.principle == "market":
            if self.drivers is None:
                raise ValueError("market principle requires drivers")
            missing = [n for n in node_ids if n not in self.drivers]
            if missing:
                raise ValueError(f"missing drivers for {missing}")
        if self.principle == "covariance" and self.covariances is not None:
            missing = [n for n in node_ids if n not in self.covariances]
            if missing:
                raise ValueError(f"missing covariances for {missing}")


# --------------------------------------------------------------------------
# parsing

def _as_number(value, what: str, findings: list[Finding], node: str | None) -> float | None:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        findings.append(Finding("error", "malformed document", f"{what} is not a number: {value!r}", node))
        return None
    x = float(value)
    if not math.isfinite(x):
        findings.append(Finding("error", "malformed document", f"{what} is not finite", node))
        return None
    return x


def parse_tree(document: str | bytes | Mapping[str, Any]) -> RiskTree:
    """Parse a tree document (JSON text or an already decoded mapping).

    Raises:
        TreeError: if the document is malformed or violates a tree invariant.
            ``err.findings`` lists every problem found, each naming the
            offending node or matrix entry.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise TreeError([Finding("error", "malformed document", f"invalid JSON: {exc}")]) from exc
    findings: list[Finding] = []

    def fail(code, msg, node=None):
        findings.append(Finding("error", code, msg, node))

    if not isinstance(document, Mapping):
        raise TreeError([Finding("error", "malformed document", "top level must be an object")])
    root = document.get("root")
    raw_nodes = document.get("nodes")
    raw_matrices = document.get("matrices", {}) or {}
    notes = document.get("notes", {}) or {}
    if not isinstance(root, str):
        fail("malformed document", "'root' must be a string id")
    if not isinstance(raw_nodes, list) or not raw_nodes:
        fail("malformed document", "'nodes' must be a non-empty list")
    if not isinstance(raw_matrices, Mapping):
        fail("malformed document", "'matrices' must be an object")
    if findings:
        raise TreeError(findings)

    nodes: dict[str, RiskNode] = {}
    for i, raw in enumerate(raw_nodes):
        if not isinstance(raw, Mapping) or not isinstance(raw.get("id"), str):
            fail("malformed document", f"nodes[{i}] needs a string 'id'")
            continue
        nid = raw["id"]
        if nid in nodes:
            fail("duplicate id", f"node id {nid!r} appears more than once", nid)
            continue
        children = raw.get("children") or []
        if not isinstance(children, list) or not all(isinstance(c, str) for c in children):
            fail("malformed document", f"children of {nid!r} must be a list of ids", nid)
            children = []
        scr = raw.get("scr")
        if scr is not None:
            scr = _as_number(scr, f"scr of {nid!r}", findings, nid)
        driver = raw.get("driver")
        if driver is not None:
            driver = _as_number(driver, f"driver of {nid!r}", findings, nid)
        nodes[nid] = RiskNode(nid, str(raw.get("name", nid)), tuple(children), scr, driver)

    matrices: dict[str, CorrelationMatrix] = {}
    for nid, rows in raw_matrices.items():
        if (not isinstance(rows, list) or not all(isinstance(r, list) for r in rows)
                or any(isinstance(x, bool) or not isinstance(x, (int, float)) for r in rows for x in r)):
            fail("malformed document", f"matrix of {nid!r} must be a list of numeric rows", nid)
            continue
        n = len(rows)
        if n == 0 or any(len(r) != n for r in rows):
            fail("matrix order mismatch", f"matrix of {nid!r} is not square ({[len(r) for r in rows]} row lengths)", nid)
            continue
        matrices[nid] = CorrelationMatrix(rows)

    if findings:
        raise TreeError(findings)
    tree = RiskTree(root, nodes, matrices, {str(k): str(v) for k, v in notes.items()})
    findings = validate_tree(tree)
    if any(f.level == "error" for f in findings):
        raise TreeError(findings)
    return tree


def load_tree(path: str | Path) -> RiskTree:
    return parse_tree(Path(path).read_text())


def serialize_tree(tree: RiskTree) -> dict[str, Any]:
    """Encode a tree as a JSON-compatible document (inverse of parse_tree)."""
    nodes = []
    for nid in tree.preorder():
        n = tree.nodes[nid]
        rec: dict[str, Any] = {"id": n.id, "name": n.name}
        if n.children:
            rec["children"] = list(n.children)
        else:
            rec["scr"] = n.standalone_scr
        if n.driver is not None:
            rec["driver"] = n.driver
        nodes.append(rec)
    doc: dict[str, Any] = {
        "root": tree.root,
        "nodes": nodes,
        "matrices": {nid: tree.matrices[nid].tolist() for nid in tree.preorder() if nid in tree.matrices},
    }
    if tree.notes:
        doc["notes"] = dict(tree.notes)
    return doc


def dumps(tree: RiskTree, **kwargs) -> str:
    return json.dumps(serialize_tree(tree), **kwargs)


# --------------------------------------------------------------------------
# validation

def validate_tree(tree: RiskTree) -> list[Finding]:
    """Check every tree invariant. Errors and warnings are returned, not raised.

    A correlation matrix that is not positive semidefinite yields a warning only:
    regulatory matrices must be usable as published.
    """
    findings: list[Finding] = []

    def err(code, msg, node=None):
        findings.append(Finding("error", code, msg, node))

    if tree.root not in tree.nodes:
        err("unknown root", f"root {tree.root!r} is not a node")
        return findings

    parents: dict[str, str] = {}
    for node in tree.nodes.values():
        for child in node.children:
            if child not in tree.nodes:
                err("unknown child", f"node {node.id!r} lists unknown child {child!r}", node.id)
            elif child in parents:
                err("multiple parents", f"node {child!r} is a child of both {parents[child]!r} and {node.id!r}", child)
            else:
                parents[child] = node.id
        if len(set(node.children)) != len(node.children):
            err("duplicate id", f"node {node.id!r} lists a child twice", node.id)
    if tree.root in parents:
        err("cycle detected", f"root {tree.root!r} is the child of {parents[tree.root]!r}", tree.root)

    # reachability and cycles
    seen: set[str] = set()
    on_path: set[str] = set()

    def visit(nid: str):
        seen.add(nid)
        on_path.add(nid)
        for c in tree.nodes[nid].children:
            if c not in tree.nodes:
                continue
            if c in on_path:
                err("cycle detected", f"edge {nid!r} -> {c!r} closes a cycle", c)
            elif c not in seen:
                visit(c)
        on_path.discard(nid)

    visit(tree.root)
    for nid in tree.nodes:
        if nid not in seen:
            err("unreachable node", f"node {nid!r} is not reachable from root {tree.root!r}", nid)

    for node in tree.nodes.values():
        if node.is_leaf:
            if node.standalone_scr is None:
                err("missing scr", f"leaf {node.id!r} has no scr", node.id)
            elif node.standalone_scr < 0:
                err("negative leaf scr", f"leaf {node.id!r} has scr {node.standalone_scr}", node.id)
            if node.id in tree.matrices:
                err("matrix on leaf", f"leaf {node.id!r} must not carry a matrix", node.id)
        else:
            if node.standalone_scr is not None:
                err("scr on internal node", f"internal node {node.id!r} must not carry an input scr", node.id)
            if node.id not in tree.matrices:
                err("missing matrix", f"internal node {node.id!r} has no correlation matrix", node.id)
        if node.driver is not None and node.driver < 0:
            err("negative driver", f"node {node.id!r} has driver {node.driver}", node.id)

    for nid, cm in tree.matrices.items():
        if nid not in tree.nodes:
            err("unknown matrix owner", f"matrix given for unknown node {nid!r}", nid)
            continue
        m = cm.entries
        k = len(tree.nodes[nid].children)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] != k:
            err("matrix order mismatch", f"matrix of {nid!r} has shape {m.shape}, node has {k} children", nid)
            continue
        if not np.all(np.isfinite(m)):
            err("malformed document", f"matrix of {nid!r} has non-finite entries", nid)
            continue
        before = len(findings)
        for i, j in zip(*np.nonzero(m != m.T)):
            if i < j:
                err("asymmetric matrix", f"matrix of {nid!r}: entry [{i}][{j}]={m[i, j]} != [{j}][{i}]={m[j, i]}", nid)
        for i in np.nonzero(np.diag(m) != 1.0)[0]:
            err("diagonal not 1", f"matrix of {nid!r}: entry [{i}][{i}]={m[i, i]}", nid)
        for i, j in zip(*np.nonzero(np.abs(m) > 1.0)):
            if i > j and m[i, j] == m[j, i]:
                continue
            err("correlation out of range", f"matrix of {nid!r}: entry [{i}][{j}]={m[i, j]} outside [-1, 1]", nid)
        if k > 1 and len(findings) == before:
            lam = float(np.linalg.eigvalsh(m).min())
            if lam < -_PSD_TOL:
                findings.append(Finding("warning", "not positive semidefinite",
                                        f"matrix of {nid!r} has smallest eigenvalue {lam:.6g}", nid))
    return findings


def errors(findings: Sequence[Finding]) -> list[Finding]:
    return [f for f in findings if f.level == "error"]
