"""Splits graphs: realization, metric check, layout, clustering and export.

A splits graph is built by convex expansion.  Each node carries its side
for every split inserted so far; the convex hull of a taxon set is the
intersection of the half-spaces that contain the whole set.  Inserting a
split duplicates the nodes lying in both hulls (one copy per side, joined
by a new edge tagged with the split) and reconnects the rest on their own
side.  Splits go in by decreasing weight, ties by sorted side members.
"""
from __future__ import annotations

import math
import re
import shlex
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import networkx as nx
import numpy as np

from .core import DistanceMatrix
from .errors import ArchgenError, ParseError
from .neighbornet import CircularOrdering, Split, SplitSystem, split_metric
from .njtree import PhyloTree


@dataclass(frozen=True)
class SplitsGraph:
    labels: tuple[str, ...]
    node_taxa: tuple[tuple[int, ...], ...]
    edges: tuple[tuple[int, int, int], ...]        # (u, v, split id)
    weights: tuple[float, ...]                     # indexed by split id
    coords: np.ndarray | None = field(default=None, compare=False)

    @property
    def n_nodes(self) -> int:
        return len(self.node_taxa)

    def taxon_node(self) -> dict[int, int]:
        return {t: v for v, taxa in enumerate(self.node_taxa) for t in taxa}

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        for v, taxa in enumerate(self.node_taxa):
            g.add_node(v, taxa=taxa)
        for u, v, sid in self.edges:
            g.add_edge(u, v, split=sid, weight=self.weights[sid])
        return g

    def loop_count(self) -> int:
        """Independent cycles (edges - nodes + components)."""
        return len(self.edges) - self.n_nodes + nx.number_connected_components(self.to_networkx())

    def is_tree(self) -> bool:
        return self.loop_count() == 0

    def with_coords(self, coords) -> "SplitsGraph":
        return SplitsGraph(self.labels, self.node_taxa, self.edges, self.weights, np.asarray(coords))


def insertion_order(s: SplitSystem) -> list[int]:
    return sorted(range(len(s.splits)), key=lambda i: (-s.splits[i].weight, s.splits[i].members()))


def build_splits_graph(s: SplitSystem) -> SplitsGraph:
    n = s.n_taxa
    for sp in s.splits:
        if s.ordering.arc_of(sp.side) is None:
            raise ArchgenError(f"split {sp.members()} is not circular")
    node_taxa: list[set[int]] = [set(range(n))]
    sig = np.zeros((1, 0), dtype=bool)             # node x inserted split: on the split's side
    taxon_sig = np.zeros((n, 0), dtype=bool)
    edges: list[tuple[int, int, int]] = []
    for sid in insertion_order(s):
        side = s.splits[sid].side
        in_a = np.zeros(n, dtype=bool)
        in_a[list(side)] = True

        def hull(mask):
            ts = taxon_sig[mask]
            all_in, none_in = ts.all(axis=0), ~ts.any(axis=0)
            ok = np.ones(len(node_taxa), dtype=bool)
            if all_in.any():
                ok &= sig[:, all_in].all(axis=1)
            if none_in.any():
                ok &= ~sig[:, none_in].any(axis=1)
            return ok

        ha, hb = hull(in_a), hull(~in_a)
        if not (ha | hb).all():
            raise ArchgenError("convex expansion failed: node outside both hulls")
        both = np.flatnonzero(ha & hb)
        copy_of = {}
        for v in both:
            copy_of[int(v)] = len(node_taxa) + len(copy_of)
        # A side keeps the original id, B side of duplicated nodes gets the copy
        new_taxa = [set() for _ in range(len(node_taxa) + len(copy_of))]
        new_side = np.zeros(len(new_taxa), dtype=bool)
        for v, taxa in enumerate(node_taxa):
            if v in copy_of:
                new_taxa[v] = {t for t in taxa if in_a[t]}
                new_taxa[copy_of[v]] = {t for t in taxa if not in_a[t]}
                new_side[v] = True
            else:
                new_taxa[v] = set(taxa)
                new_side[v] = bool(ha[v])
        new_edges = []
        for u, v, t in edges:
            if u in copy_of and v in copy_of:
                new_edges.append((u, v, t))
                new_edges.append((copy_of[u], copy_of[v], t))
            elif u in copy_of or v in copy_of:
                a, b = (u, v) if u not in copy_of else (v, u)     # a is the undivided end
                side_a = bool(ha[a])
                new_edges.append((a, b if side_a else copy_of[b], t))
            else:
                if ha[u] != ha[v]:
                    raise ArchgenError("convex expansion failed: edge crosses the new split")
                new_edges.append((u, v, t))
        for v in copy_of:
            new_edges.append((v, copy_of[v], sid))
        old_sig = sig
        sig = np.zeros((len(new_taxa), old_sig.shape[1] + 1), dtype=bool)
        sig[:len(node_taxa), :-1] = old_sig
        for v, c in copy_of.items():
            sig[c, :-1] = old_sig[v]
        sig[:, -1] = new_side
        taxon_sig = np.column_stack([taxon_sig, in_a])
        node_taxa = new_taxa
        edges = new_edges
    edges = sorted((min(u, v), max(u, v), t) for u, v, t in edges)
    return SplitsGraph(s.labels, tuple(tuple(sorted(t)) for t in node_taxa), tuple(edges),
                       tuple(sp.weight for sp in s.splits))


def graph_distances(g: SplitsGraph) -> np.ndarray:
    """Shortest-path lengths between taxa."""
    n = len(g.labels)
    nxg = g.to_networkx()
    where = g.taxon_node()
    out = np.zeros((n, n))
    for i in range(n):
        lengths = nx.single_source_dijkstra_path_length(nxg, where[i], weight="weight")
        for j in range(n):
            out[i, j] = lengths[where[j]]
    return out


def verify_graph_metric(g: SplitsGraph, s: SplitSystem) -> float:
    """Largest deviation between graph path lengths and the split metric."""
    if len(g.labels) < 2:
        return 0.0
    return float(np.abs(graph_distances(g) - split_metric(s).d).max())


def split_angles(s: SplitSystem) -> np.ndarray:
    """Direction of each split: mid-angle of its arc, taxa spaced 2 pi / n."""
    n = s.n_taxa
    out = np.zeros(len(s.splits))
    for k, sp in enumerate(s.splits):
        a, b = s.ordering.arc_of(sp.side)
        out[k] = math.pi * (a + b) / n
    return out


def equal_angle_layout(g: SplitsGraph, s: SplitSystem, min_fraction: float = 0.01) -> np.ndarray:
    """Node coordinates, shape ``(n_nodes, 2)``.

    Every edge of a split is drawn as the same vector: its weight (at least
    ``min_fraction`` of the largest weight) along the split's angle.  A node
    sits at the sum of these vectors over the splits whose side it lies on.
    """
    m = len(s.splits)
    if m == 0:
        return np.zeros((g.n_nodes, 2))
    ang = split_angles(s)
    w = np.array([sp.weight for sp in s.splits])
    length = np.maximum(w, min_fraction * max(w.max(), 1e-12))
    vec = np.stack([np.cos(ang), np.sin(ang)], axis=1) * length[:, None]
    # recover side membership per node by walking from the taxon-0 node
    nxg = g.to_networkx()
    start = g.taxon_node()[0]
    pos = {start: np.zeros(2)}
    on_side = {start: np.zeros(m, dtype=bool)}
    for u, v in nx.bfs_edges(nxg, start):
        sid = nxg.edges[u, v]["split"]
        sides = on_side[u].copy()
        sides[sid] = not sides[sid]
        on_side[v] = sides
        pos[v] = pos[u] + (vec[sid] if sides[sid] else -vec[sid])
    return np.array([pos[v] for v in range(g.n_nodes)])


# -- clustering --------------------------------------------------------------

@dataclass(frozen=True)
class StyleClusters:
    k: int
    assignment: Mapping[str, int]
    method: str = "average-linkage"

    def groups(self) -> list[list[str]]:
        out = [[] for _ in range(self.k)]
        for taxon, c in self.assignment.items():
            out[c - 1].append(taxon)
        return out


def average_linkage_merges(d: np.ndarray) -> list[tuple[int, int, float]]:
    """UPGMA merge sequence over cluster list positions.

    The merged cluster takes the lower position, so positions stay ordered
    by smallest member; equal distances go to the smallest position pair.
    """
    D = np.array(d, dtype=float)
    sizes = [1] * len(D)
    merges = []
    while len(sizes) > 1:
        r = len(sizes)
        iu = np.triu_indices(r, k=1)
        k = int(np.argmin(D[iu]))
        i, j = int(iu[0][k]), int(iu[1][k])
        merges.append((i, j, float(D[i, j])))
        si, sj = sizes[i], sizes[j]
        row = (si * D[i] + sj * D[j]) / (si + sj)
        D[i, :] = row
        D[:, i] = row
        D[i, i] = 0.0
        D = np.delete(np.delete(D, j, axis=0), j, axis=1)
        sizes[i] = si + sj
        del sizes[j]
    return merges


def cluster_styles(d: DistanceMatrix, k: int) -> StyleClusters:
    """Average-linkage clustering cut at ``k`` clusters.

    Cluster ids 1..k follow the first appearance of a member in label order.
    """
    n = d.n
    if not 1 <= k <= n:
        raise ArchgenError(f"number of clusters must be in 1..{n}, got {k}")
    members = [[i] for i in range(n)]
    for i, j, _ in average_linkage_merges(d.d)[:n - k]:
        members[i] = members[i] + members[j]
        del members[j]
    members.sort(key=min)
    assignment = {}
    for cid, group in enumerate(members, start=1):
        for i in sorted(group):
            assignment[d.labels[i]] = cid
    return StyleClusters(k, {lab: assignment[lab] for lab in d.labels})


# -- tree export -------------------------------------------------------------

def splits_to_tree(s: SplitSystem) -> PhyloTree:
    """The tree realizing a pairwise-compatible split system."""
    if not s.is_compatible():
        raise ArchgenError("split system is not compatible; it has no tree")
    g = build_splits_graph(s)
    n = s.n_taxa
    if n == 1:
        return PhyloTree(s.labels, ())
    node_id = {}
    extra = []
    for v, taxa in enumerate(g.node_taxa):
        deg = sum(1 for e in g.edges if v in e[:2])
        if len(taxa) == 1 and deg == 1:
            node_id[v] = taxa[0]
    nxt = n
    for v in range(g.n_nodes):
        if v not in node_id:
            node_id[v] = nxt
            nxt += 1
    edges = [(node_id[u], node_id[v], g.weights[sid]) for u, v, sid in g.edges]
    for v, taxa in enumerate(g.node_taxa):
        if node_id[v] >= n:
            extra.extend((t, node_id[v], 0.0) for t in taxa)
    return PhyloTree(s.labels, tuple(edges + extra))


# -- interchange format ------------------------------------------------------

def format_splits(s: SplitSystem) -> str:
    """Text block: ``#SPLITS`` header, then ``<weight> <members>`` per split.

    Taxon indices are 1-based; members list the side without taxon 1.
    """
    lines = ["#SPLITS", f"ntax={s.n_taxa}", f"nsplits={len(s.splits)}",
             "cycle=" + " ".join(str(c + 1) for c in s.ordering.cycle),
             "taxlabels=" + " ".join(shlex.quote(lab) for lab in s.labels)]
    for sp in s.splits:
        lines.append(f"{float(sp.weight)!r} " + ",".join(str(t + 1) for t in sp.members()))
    return "\n".join(lines) + "\n"


def parse_splits(text: str) -> SplitSystem:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].strip() != "#SPLITS":
        raise ParseError("missing '#SPLITS' header", line=1)
    header, k = {}, 1
    while k < len(lines) and "=" in lines[k]:
        key, _, value = lines[k].partition("=")
        header[key.strip()] = (value.strip(), k + 1)
        k += 1
    for key in ("ntax", "nsplits", "cycle"):
        if key not in header:
            raise ParseError(f"missing '{key}=' header line")
    try:
        n = int(header["ntax"][0])
        m = int(header["nsplits"][0])
    except ValueError:
        raise ParseError("ntax and nsplits must be integers") from None
    try:
        cycle = [int(x) - 1 for x in header["cycle"][0].split()]
    except ValueError:
        raise ParseError("cycle must list taxon indices", line=header["cycle"][1]) from None
    if len(cycle) != n:
        raise ParseError(f"cycle lists {len(cycle)} taxa, ntax={n}", line=header["cycle"][1])
    if "taxlabels" in header:
        labels = shlex.split(header["taxlabels"][0])
        if len(labels) != n:
            raise ParseError(f"taxlabels lists {len(labels)} labels, ntax={n}",
                             line=header["taxlabels"][1])
    else:
        labels = [str(i + 1) for i in range(n)]
    splits = []
    body = lines[k:]
    if len(body) != m:
        raise ParseError(f"nsplits={m} but {len(body)} split lines follow")
    for lineno, line in enumerate(body, start=k + 1):
        parts = line.split()
        if len(parts) != 2:
            raise ParseError("split line must be '<weight> <members>'", line=lineno)
        try:
            w = float(parts[0])
            members = [int(x) - 1 for x in parts[1].split(",")]
        except ValueError:
            raise ParseError("malformed split line", line=lineno) from None
        if any(not 1 <= t < n for t in members):
            raise ParseError("split members must be taxa 2..ntax", line=lineno)
        try:
            splits.append(Split(frozenset(members), w))
        except ArchgenError as exc:
            raise ParseError(str(exc), line=lineno) from None
    try:
        return SplitSystem(tuple(labels), tuple(splits), CircularOrdering(cycle))
    except ArchgenError as exc:
        raise ParseError(str(exc)) from None


def format_splits_csv(s: SplitSystem) -> str:
    lines = ["weight,members"]
    for sp in s.splits:
        members = ";".join(s.labels[t] for t in sp.members())
        if any(c in members for c in ',"\n'):
            members = '"' + members.replace('"', '""') + '"'
        lines.append(f"{float(sp.weight)!r},{members}")
    return "\n".join(lines) + "\n"


# -- DOT ---------------------------------------------------------------------

def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def format_dot(g: SplitsGraph, coords: np.ndarray | None = None) -> str:
    coords = g.coords if coords is None else coords
    out = ["graph splits {"]
    for v, taxa in enumerate(g.node_taxa):
        attrs = []
        if taxa:
            attrs.append('label="' + _dot_escape("\\n".join(g.labels[t] for t in taxa)) + '"')
            attrs.append('taxa="' + " ".join(str(t) for t in taxa) + '"')
        else:
            attrs.append('label=""')
        if coords is not None:
            attrs.append(f'pos="{coords[v][0]:.6f},{coords[v][1]:.6f}"')
        out.append(f"  n{v} [{', '.join(attrs)}];")
    for u, v, sid in g.edges:
        out.append(f"  n{u} -- n{v} [split={sid}, len={float(g.weights[sid])!r}];")
    out.append("}")
    return "\n".join(out) + "\n"


_NODE_RE = re.compile(r'^\s*n(\d+)\s*\[(.*)\];\s*$')
_EDGE_RE = re.compile(r'^\s*n(\d+)\s*--\s*n(\d+)\s*\[split=(\d+),\s*len=([^\]]+)\];\s*$')
_TAXA_RE = re.compile(r'taxa="([\d ]*)"')


def parse_dot(text: str, labels: Sequence[str]) -> SplitsGraph:
    """Read back a graph written by :func:`format_dot`."""
    taxa, edges, weights = {}, [], {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        e = _EDGE_RE.match(line)
        if e:
            u, v, sid = int(e.group(1)), int(e.group(2)), int(e.group(3))
            edges.append((min(u, v), max(u, v), sid))
            weights[sid] = float(e.group(4))
            continue
        nd = _NODE_RE.match(line)
        if nd:
            tm = _TAXA_RE.search(nd.group(2))
            taxa[int(nd.group(1))] = tuple(int(t) for t in tm.group(1).split()) if tm else ()
            continue
        if line.strip() not in ("graph splits {", "}", ""):
            raise ParseError(f"unrecognised DOT line {line.strip()!r}", line=lineno)
    if sorted(taxa) != list(range(len(taxa))):
        raise ParseError("node ids must be dense n0..nN")
    m = max(weights, default=-1) + 1
    return SplitsGraph(tuple(labels), tuple(taxa[v] for v in range(len(taxa))), tuple(sorted(edges)),
                       tuple(weights.get(i, 0.0) for i in range(m)))


# -- SVG ---------------------------------------------------------------------

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def format_svg(g: SplitsGraph, coords: np.ndarray, clusters: StyleClusters | None = None,
               size: int = 800, margin: int = 80) -> str:
    coords = np.asarray(coords, dtype=float)
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    span = max(float((hi - lo).max()), 1e-12)
    scale = (size - 2 * margin) / span

    def xy(v):
        x, y = (coords[v] - lo) * scale + margin
        return x, size - y

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">',
           f'<rect width="{size}" height="{size}" fill="white"/>']
    for u, v, sid in g.edges:
        (x1, y1), (x2, y2) = xy(u), xy(v)
        out.append(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
                   f'stroke="#444" stroke-width="1.2" data-split="{sid}"/>')
    centre = np.array([size / 2, size / 2])
    for v, taxa in enumerate(g.node_taxa):
        if not taxa:
            continue
        x, y = xy(v)
        direction = np.array([x, y]) - centre
        norm = float(np.hypot(*direction)) or 1.0
        for k, t in enumerate(taxa):
            lab = g.labels[t]
            colour = "#000"
            if clusters is not None and lab in clusters.assignment:
                colour = PALETTE[(clusters.assignment[lab] - 1) % len(PALETTE)]
            tx = x + 12 * direction[0] / norm
            ty = y + 12 * direction[1] / norm + 12 * k
            anchor = "start" if direction[0] >= 0 else "end"
            text = lab.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
            out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="{colour}"/>')
            out.append(f'<text x="{tx:.2f}" y="{ty:.2f}" font-size="12" font-family="sans-serif" '
                       f'text-anchor="{anchor}" fill="{colour}">{text}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
