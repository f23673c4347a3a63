"""Neighbor-joining trees: construction, path metric, cherries, Newick I/O.

Trees are unrooted.  Leaves are nodes ``0..n-1`` (leaf ``i`` carries
``labels[i]``); internal nodes are numbered from ``n`` upwards in creation
order, so the highest id is the last internal node created.  Newick output
is rooted at that node.
"""
from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .core import DistanceMatrix
from .errors import ArchgenError, ParseError, SizeError

NEWICK_META = set("()[]':;, \t\n")


@dataclass(frozen=True)
class PhyloTree:
    labels: tuple[str, ...]
    edges: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        n = len(self.labels)
        if len(set(self.labels)) != n:
            raise ArchgenError("duplicate leaf labels")
        if n == 1:
            if self.edges:
                raise ArchgenError("a one-leaf tree has no edges")
            return
        nodes = {u for e in self.edges for u in e[:2]}
        if nodes != set(range(len(nodes))) or not set(range(n)) <= nodes:
            raise ArchgenError("tree nodes must be numbered 0..N-1 with leaves first")
        if len(self.edges) != len(nodes) - 1:
            raise ArchgenError("tree must have exactly one edge fewer than nodes")
        for u, v, length in self.edges:
            if not np.isfinite(length):
                raise ArchgenError("branch lengths must be finite")
        adj = self.adjacency
        for leaf in range(n):
            if len(adj[leaf]) != 1:
                raise ArchgenError(f"leaf {self.labels[leaf]!r} must have degree 1")
        seen, queue = {0}, deque([0])
        while queue:
            u = queue.popleft()
            for v, _ in adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        if len(seen) != len(nodes):
            raise ArchgenError("tree is not connected")

    @property
    def n_leaves(self) -> int:
        return len(self.labels)

    @property
    def n_nodes(self) -> int:
        return max(len(self.edges) + 1, len(self.labels))

    @cached_property
    def adjacency(self) -> dict[int, list[tuple[int, float]]]:
        adj = defaultdict(list)
        for u, v, length in self.edges:
            adj[u].append((v, length))
            adj[v].append((u, length))
        for nbrs in adj.values():
            nbrs.sort()
        return dict(adj)

    def is_leaf(self, node: int) -> bool:
        return node < len(self.labels)

    def splits(self) -> dict[frozenset, float]:
        """Edge bipartitions as {side not containing leaf 0: branch length}."""
        n = len(self.labels)
        if n < 2:
            return {}
        adj = self.adjacency
        parent, order = {0: None}, [0]
        for u in order:
            for v, _ in adj[u]:
                if v not in parent:
                    parent[v] = u
                    order.append(v)
        below = {}
        for u in reversed(order):
            s = {u} if u < n else set()
            for v, _ in adj[u]:
                if parent.get(v) == u:
                    s |= below[v]
            below[u] = s
        out = {}
        lengths = {(min(u, v), max(u, v)): w for u, v, w in self.edges}
        for u in order[1:]:
            side = frozenset(below[u])
            out[side] = out.get(side, 0.0) + lengths[(min(u, parent[u]), max(u, parent[u]))]
        return out


def _check_dm(d: DistanceMatrix):
    if not np.isfinite(d.d).all():
        raise ArchgenError("distance matrix has non-finite entries")


def nj(d: DistanceMatrix, clamp_negative: bool = False) -> PhyloTree:
    """Neighbor-joining.

    Joins the active pair minimising ``Q(i, j) = (r-2) d(i,j) - R_i - R_j``;
    ties go to the smallest ``(i, j)`` in the current active list, where the
    new node is appended after the survivors.  When ``clamp_negative`` is
    set, a negative branch is raised to 0 and its deficit added to its
    sibling so the pair still sums to ``d(i, j)``.
    """
    n = d.n
    if n < 2:
        raise SizeError("neighbor joining needs at least 2 taxa")
    _check_dm(d)
    D = np.array(d.d, dtype=float)
    active = list(range(n))
    next_id = n
    edges = []
    while len(active) > 2:
        r = len(active)
        R = D.sum(axis=1)
        Q = (r - 2) * D - R[:, None] - R[None, :]
        iu = np.triu_indices(r, k=1)
        k = int(np.argmin(Q[iu]))
        i, j = int(iu[0][k]), int(iu[1][k])
        vi = 0.5 * D[i, j] + (R[i] - R[j]) / (2.0 * (r - 2))
        vj = D[i, j] - vi
        if clamp_negative:
            if vi < 0:
                vi, vj = 0.0, vj + vi
            elif vj < 0:
                vi, vj = vi + vj, 0.0
        u = next_id
        next_id += 1
        edges.append((active[i], u, float(vi)))
        edges.append((active[j], u, float(vj)))
        du = 0.5 * (D[i] + D[j] - D[i, j])
        keep = [k for k in range(r) if k != i and k != j]
        newD = np.empty((r - 1, r - 1))
        newD[:-1, :-1] = D[np.ix_(keep, keep)]
        newD[-1, :-1] = newD[:-1, -1] = du[keep]
        newD[-1, -1] = 0.0
        D = newD
        active = [active[k] for k in keep] + [u]
    length = float(D[0, 1])
    if clamp_negative:
        length = max(length, 0.0)
    edges.append((active[0], active[1], length))
    return PhyloTree(d.labels, tuple(edges))


def signed_path_lengths(t: PhyloTree) -> np.ndarray:
    """Leaf-to-leaf path sums as an array, negative branches included."""
    n = t.n_leaves
    out = np.zeros((n, n))
    if n < 2:
        return out
    adj = t.adjacency
    for src in range(n):
        dist = {src: 0.0}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v, w in adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + w
                    queue.append(v)
        out[src] = [dist[j] for j in range(n)]
    return (out + out.T) / 2.0


def tree_distance_matrix(t: PhyloTree) -> DistanceMatrix:
    """Leaf-to-leaf path lengths.

    Negative path sums (possible with unclamped NJ branches) are floored at
    0 because a :class:`DistanceMatrix` is non-negative; use
    :func:`signed_path_lengths` for the raw values.
    """
    return DistanceMatrix(t.labels, np.maximum(signed_path_lengths(t), 0.0))


def cherries(t: PhyloTree) -> list[tuple[str, str]]:
    """Leaf pairs sharing an internal neighbour, ordered by leaf index.

    A two-leaf tree has a single cherry.
    """
    n = t.n_leaves
    if n == 2:
        return [(t.labels[0], t.labels[1])]
    pairs = set()
    for node, nbrs in t.adjacency.items():
        if node < n:
            continue
        leaves = sorted(v for v, _ in nbrs if v < n)
        for a in range(len(leaves)):
            for b in range(a + 1, len(leaves)):
                pairs.add((leaves[a], leaves[b]))
    return [(t.labels[a], t.labels[b]) for a, b in sorted(pairs)]


def ls_fit(d: DistanceMatrix, model) -> float:
    """Least-squares fit percentage ``100 (1 - sum (d - model)^2 / sum d^2)``.

    ``model`` is a :class:`DistanceMatrix` with the same labels or a bare
    array in ``d``'s label order.  Two all-zero matrices fit perfectly.
    """
    if isinstance(model, DistanceMatrix):
        if model.labels != d.labels:
            if sorted(model.labels) != sorted(d.labels):
                raise ArchgenError("distance matrices have different labels")
            idx = [model.labels.index(x) for x in d.labels]
            model = model.d[np.ix_(idx, idx)]
        else:
            model = model.d
    model = np.asarray(model, dtype=float)
    if model.shape != d.d.shape:
        raise ArchgenError("distance matrices have different shapes")
    iu = np.triu_indices(d.n, k=1)
    obs = d.d[iu]
    res = float(((obs - model[iu]) ** 2).sum())
    tot = float((obs ** 2).sum())
    if tot == 0.0:
        return 100.0 if res == 0.0 else float("-inf")
    return 100.0 * (1.0 - res / tot)


# -- Newick ------------------------------------------------------------------

def quote_label(label: str) -> str:
    if label and not any(c in NEWICK_META or c.isspace() for c in label):
        return label
    return "'" + label.replace("'", "''") + "'"


def _fmt(x: float, precision: int) -> str:
    s = f"{x:.{precision}f}"
    if s.lstrip("-").strip("0.") == "":
        s = s.lstrip("-")
    return s


def to_newick(t: PhyloTree, precision: int = 6) -> str:
    """Serialize rooted at the highest-numbered internal node.

    Children are written in node-id order.  A two-leaf tree is written with
    its edge split at the midpoint.
    """
    n = t.n_leaves
    if n == 1:
        return quote_label(t.labels[0]) + ";"
    if n == 2 and len(t.edges) == 1:
        half = t.edges[0][2] / 2.0
        return (f"({quote_label(t.labels[0])}:{_fmt(half, precision)},"
                f"{quote_label(t.labels[1])}:{_fmt(half, precision)});")
    adj = t.adjacency
    root = t.n_nodes - 1

    def write(node, parent):
        if node < n:
            return quote_label(t.labels[node])
        parts = []
        for child, w in adj[node]:
            if child != parent:
                parts.append(f"{write(child, node)}:{_fmt(w, precision)}")
        return "(" + ",".join(parts) + ")"

    return write(root, None) + ";"


class _Reader:
    def __init__(self, text):
        self.s = text
        self.i = 0

    def peek(self):
        self.skip()
        return self.s[self.i] if self.i < len(self.s) else ""

    def skip(self):
        while self.i < len(self.s):
            c = self.s[self.i]
            if c.isspace():
                self.i += 1
            elif c == "[":
                end = self.s.find("]", self.i)
                if end < 0:
                    raise ParseError(f"unterminated comment at offset {self.i}")
                self.i = end + 1
            else:
                break

    def expect(self, ch):
        if self.peek() != ch:
            raise ParseError(f"expected {ch!r} at offset {self.i}, found {self.peek()!r}")
        self.i += 1

    def label(self):
        self.skip()
        if self.peek() == "'":
            self.i += 1
            out = []
            while True:
                if self.i >= len(self.s):
                    raise ParseError("unterminated quoted label")
                c = self.s[self.i]
                if c == "'":
                    if self.s[self.i + 1:self.i + 2] == "'":
                        out.append("'")
                        self.i += 2
                        continue
                    self.i += 1
                    return "".join(out)
                out.append(c)
                self.i += 1
        start = self.i
        while self.i < len(self.s) and self.s[self.i] not in "():;,[" and not self.s[self.i].isspace():
            self.i += 1
        return self.s[start:self.i]

    def length(self):
        if self.peek() != ":":
            return 0.0
        self.i += 1
        self.skip()
        start = self.i
        while self.i < len(self.s) and self.s[self.i] not in "(),;[" and not self.s[self.i].isspace():
            self.i += 1
        try:
            return float(self.s[start:self.i])
        except ValueError:
            raise ParseError(f"bad branch length {self.s[start:self.i]!r}") from None


def parse_newick(text: str) -> PhyloTree:
    """Parse a Newick string into an unrooted :class:`PhyloTree`.

    Leaves are numbered in order of appearance; internal nodes in preorder,
    with the root given the highest id so that :func:`to_newick` writes the
    same string back.  A degree-2 root is suppressed by merging its edges.
    Internal node labels are ignored and missing lengths read as 0.
    """
    r = _Reader(text.strip())
    # nested structure: ("leaf", label) or ("node", [(child, length), ...])

    def node():
        if r.peek() == "(":
            r.i += 1
            children = []
            while True:
                child = node()
                children.append((child, r.length()))
                c = r.peek()
                if c == ",":
                    r.i += 1
                    continue
                r.expect(")")
                break
            r.label()
            return ("node", children)
        lab = r.label()
        if lab == "":
            raise ParseError(f"empty leaf label at offset {r.i}")
        return ("leaf", lab)

    tree = node()
    r.length()
    r.expect(";")
    if r.peek():
        raise ParseError("trailing text after ';'")
    if tree[0] == "leaf":
        return PhyloTree((tree[1],), ())

    labels, internal = [], []

    def walk(t):
        if t[0] == "leaf":
            labels.append(t[1])
            return
        internal.append(t)
        for child, _ in t[1]:
            walk(child)

    walk(tree)
    if len(set(labels)) != len(labels):
        raise ParseError("duplicate leaf labels")
    n = len(labels)
    ids = {}
    # preorder ids for non-root internals, root last
    for k, t in enumerate(internal[1:]):
        ids[id(t)] = n + k
    ids[id(tree)] = n + len(internal) - 1
    edges = []

    def assign(t):
        if t[0] == "leaf":
            return next(leaf_ids)
        me = ids[id(t)]
        for child, w in t[1]:
            edges.append((me, assign(child), w))
        return me

    leaf_ids = iter(range(n))
    assign(tree)
    root = ids[id(tree)]
    root_edges = [e for e in edges if e[0] == root]
    if len(root_edges) == 1:
        raise ParseError("root with a single child is not supported")
    if len(root_edges) == 2:
        (_, a, wa), (_, b, wb) = root_edges
        # the root had the highest id, so dropping it keeps ids dense
        edges = [e for e in edges if e[0] != root] + [(a, b, wa + wb)]
    return PhyloTree(tuple(labels), tuple(edges))
