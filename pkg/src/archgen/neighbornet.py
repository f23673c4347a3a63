"""Neighbor-net: circular ordering, circular splits and their NNLS weights.

Splits of a circular ordering are addressed by *arcs*: with the cycle
written as positions ``0..n-1`` and taxon 0 at position 0, the arc
``(a, b)`` with ``1 <= a <= b <= n-1`` is the split whose side not
containing taxon 0 is the taxa at positions ``a..b``.  There are
``n(n-1)/2`` arcs, enumerated in lexicographic ``(a, b)`` order.

Weights are fitted by Lawson-Hanson active-set NNLS.  The design matrix
(pairs x arcs, entry 1 when the arc separates the pair) is never built:
products with it and its transpose run in O(n^2) via 2-D prefix sums, and
the Gram matrix entries needed by the active-set solves have a closed form
in the arc endpoints.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .core import DistanceMatrix
from .errors import ArchgenError, ConvergenceError, SizeError

DEFAULT_WEIGHT_THRESHOLD = 1e-6
DEFAULT_NNLS_TOL = 1e-10
DELTA_EXHAUSTIVE_MAX = 20
DEFAULT_QUARTET_SAMPLE = 10_000


# -- types -------------------------------------------------------------------

def _canonical_cycle(cycle: Sequence[int]) -> tuple[int, ...]:
    cycle = [int(c) for c in cycle]
    if not cycle:
        return ()
    k = cycle.index(min(cycle))
    cycle = cycle[k:] + cycle[:k]
    if len(cycle) > 2 and cycle[1] > cycle[-1]:
        cycle = [cycle[0]] + cycle[1:][::-1]
    return tuple(cycle)


@dataclass(frozen=True)
class CircularOrdering:
    """Taxon indices around a cycle, stored rotated to start at 0 and
    reflected so the second entry is smaller than the last."""

    cycle: tuple[int, ...]

    def __init__(self, cycle: Sequence[int]):
        cycle = _canonical_cycle(cycle)
        if sorted(cycle) != list(range(len(cycle))):
            raise ArchgenError(f"cycle {cycle} is not a permutation of 0..{len(cycle) - 1}")
        object.__setattr__(self, "cycle", cycle)

    def __len__(self):
        return len(self.cycle)

    @property
    def positions(self) -> np.ndarray:
        pos = np.empty(len(self.cycle), dtype=np.int64)
        pos[list(self.cycle)] = np.arange(len(self.cycle))
        return pos

    def arc_of(self, side) -> tuple[int, int] | None:
        """The arc ``(a, b)`` whose taxa are ``side``, or None if not an arc."""
        side = set(side)
        if not side or 0 in side:
            return None
        pos = sorted(int(self.positions[t]) for t in side)
        if pos[-1] - pos[0] + 1 != len(pos):
            return None
        return pos[0], pos[-1]

    def side_of(self, a: int, b: int) -> frozenset:
        return frozenset(self.cycle[a:b + 1])


@dataclass(frozen=True)
class Split:
    side: frozenset
    weight: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "side", frozenset(int(x) for x in self.side))
        if not self.side:
            raise ArchgenError("split side is empty")
        if self.weight < 0 or not np.isfinite(self.weight):
            raise ArchgenError(f"split weight must be finite and >= 0, got {self.weight}")

    def members(self) -> tuple[int, ...]:
        return tuple(sorted(self.side))

    def separates(self, i: int, j: int) -> bool:
        return (i in self.side) != (j in self.side)


@dataclass(frozen=True)
class SplitSystem:
    labels: tuple[str, ...]
    splits: tuple[Split, ...]
    ordering: CircularOrdering

    def __post_init__(self):
        n = len(self.labels)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "splits", tuple(self.splits))
        if len(self.ordering) != n:
            raise ArchgenError("ordering does not cover the taxa")
        seen = set()
        for s in self.splits:
            if 0 in s.side or not s.side < set(range(n)):
                raise ArchgenError(f"split {s.members()} must be a proper subset excluding taxon 0")
            if self.ordering.arc_of(s.side) is None:
                raise ArchgenError(f"split {s.members()} is not circular for cycle {self.ordering.cycle}")
            if s.side in seen:
                raise ArchgenError(f"duplicate split {s.members()}")
            seen.add(s.side)

    @property
    def n_taxa(self) -> int:
        return len(self.labels)

    @property
    def weights(self) -> np.ndarray:
        return np.array([s.weight for s in self.splits], dtype=float)

    def is_compatible(self) -> bool:
        return all(compatible(a.side, b.side, self.n_taxa)
                   for a, b in itertools.combinations(self.splits, 2))

    def incompatible_pairs(self) -> list[tuple[int, int]]:
        return [(i, j) for (i, a), (j, b) in itertools.combinations(enumerate(self.splits), 2)
                if not compatible(a.side, b.side, self.n_taxa)]


def compatible(a: frozenset, b: frozenset, n: int) -> bool:
    """Two splits (given by sides excluding taxon 0) are compatible when
    some pair of their parts is disjoint."""
    if not (a & b):
        return True
    return a <= b or b <= a


def split_metric(s: SplitSystem) -> DistanceMatrix:
    """Distance = total weight of splits separating each pair."""
    n = s.n_taxa
    d = np.zeros((n, n))
    for sp in s.splits:
        ind = np.zeros(n, dtype=bool)
        ind[list(sp.side)] = True
        d += sp.weight * (ind[:, None] != ind[None, :])
    return DistanceMatrix(s.labels, d)


# -- arcs and fast operators -------------------------------------------------

def arcs(n: int) -> np.ndarray:
    """All arcs ``(a, b)`` for ``n`` taxa, shape ``(n(n-1)/2, 2)``."""
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64)
    a, b = np.triu_indices(n - 1)
    return np.stack([a + 1, b + 1], axis=1).astype(np.int64)


def circular_splits(ordering: CircularOrdering) -> list[frozenset]:
    """Every arc split of the cycle, in arc order."""
    return [ordering.side_of(int(a), int(b)) for a, b in arcs(len(ordering))]


def _positional(d: DistanceMatrix, ordering: CircularOrdering) -> np.ndarray:
    cyc = list(ordering.cycle)
    return np.asarray(d.d)[np.ix_(cyc, cyc)]


class CircularDesign:
    """Products with the pair-by-arc incidence matrix of ``n`` taxa.

    Vectors over pairs are held as symmetric ``n x n`` matrices in cycle
    position order; vectors over arcs as flat arrays in :func:`arcs` order.
    """

    def __init__(self, n: int):
        self.n = n
        self.arcs = arcs(n)
        self.m = len(self.arcs)
        p, q = np.triu_indices(n, k=1)
        self._p, self._q = p, q
        # pair (p, q) is cut by arc (a, b) iff a <= p <= b < q or p < a <= q <= b
        self._t1 = (np.ones_like(p), p, p, q - 1)
        self._t2 = (p + 1, q, q, np.full_like(q, n - 1))

    @staticmethod
    def _rect(P, a0, a1, b0, b1):
        val = P[a1 + 1, b1 + 1] - P[a0, b1 + 1] - P[a1 + 1, b0] + P[a0, b0]
        return np.where((a1 >= a0) & (b1 >= b0), val, 0.0)

    def distances(self, w: np.ndarray) -> np.ndarray:
        """``A w`` as a symmetric positional matrix."""
        n = self.n
        W = np.zeros((n, n))
        W[self.arcs[:, 0], self.arcs[:, 1]] = w
        P = np.zeros((n + 1, n + 1))
        P[1:, 1:] = W.cumsum(axis=0).cumsum(axis=1)
        vals = self._rect(P, *self._t1) + self._rect(P, *self._t2)
        out = np.zeros((n, n))
        out[self._p, self._q] = vals
        out[self._q, self._p] = vals
        return out

    def transpose(self, r: np.ndarray) -> np.ndarray:
        """``A^T r`` for a symmetric positional pair matrix ``r``."""
        n = self.n
        r = np.asarray(r, dtype=float)
        R = np.concatenate([[0.0], r.sum(axis=1).cumsum()])
        S = np.zeros((n + 1, n + 1))
        S[1:, 1:] = r.cumsum(axis=0).cumsum(axis=1)
        a, b = self.arcs[:, 0], self.arcs[:, 1]
        row = R[b + 1] - R[a]
        block = S[b + 1, b + 1] - S[a, b + 1] - S[b + 1, a] + S[a, a]
        return row - block

    def gram(self, idx_a: np.ndarray, idx_b: np.ndarray | None = None) -> np.ndarray:
        """Entries of ``A^T A``: pairs separated by both arcs."""
        idx_b = idx_a if idx_b is None else idx_b
        a1, b1 = self.arcs[idx_a, 0][:, None], self.arcs[idx_a, 1][:, None]
        a2, b2 = self.arcs[idx_b, 0][None, :], self.arcs[idx_b, 1][None, :]
        s1, s2 = b1 - a1 + 1, b2 - a2 + 1
        both = np.maximum(0, np.minimum(b1, b2) - np.maximum(a1, a2) + 1)
        neither = self.n - s1 - s2 + both
        return (both * neither + (s1 - both) * (s2 - both)).astype(float)

    def dense(self) -> np.ndarray:
        """The explicit incidence matrix, rows in ``(p, q)`` upper-triangle order."""
        p, q = self._p[:, None], self._q[:, None]
        a, b = self.arcs[:, 0][None, :], self.arcs[:, 1][None, :]
        return (((a <= p) & (p <= b)) != ((a <= q) & (q <= b))).astype(float)


# -- NNLS --------------------------------------------------------------------

@dataclass
class NNLSFit:
    weights: np.ndarray
    residual: float
    iterations: int
    gradient: np.ndarray
    history: list[float] = field(default_factory=list)


class _PassiveSet:
    """Passive (positive) arc set with a Cholesky factor of its Gram block.

    Columns are appended with an O(k^2) factor update; removals refactor.
    """

    def __init__(self, design: CircularDesign, b: np.ndarray):
        self.design = design
        self.b = b
        self.idx: list[int] = []
        self.L = np.zeros((0, 0))

    def __len__(self):
        return len(self.idx)

    def add(self, t: int) -> bool:
        """Append arc ``t``; False if it is numerically dependent on the set."""
        gtt = float(self.design.gram(np.array([t]))[0, 0])
        k = len(self.idx)
        if k:
            g = self.design.gram(np.array(self.idx), np.array([t]))[:, 0]
            l = scipy.linalg.solve_triangular(self.L, g, lower=True, check_finite=False)
            lam2 = gtt - float(l @ l)
        else:
            l = np.zeros(0)
            lam2 = gtt
        if lam2 <= 1e-10 * gtt:
            return False
        L = np.zeros((k + 1, k + 1))
        L[:k, :k] = self.L
        L[k, :k] = l
        L[k, k] = np.sqrt(lam2)
        self.L = L
        self.idx.append(t)
        return True

    def remove(self, drop) -> None:
        drop = set(int(x) for x in drop)
        self.idx = [i for i in self.idx if i not in drop]
        if self.idx:
            G = self.design.gram(np.array(self.idx))
            self.L = scipy.linalg.cholesky(G, lower=True, check_finite=False)
        else:
            self.L = np.zeros((0, 0))

    def solve(self) -> np.ndarray:
        if not self.idx:
            return np.zeros(0)
        y = scipy.linalg.solve_triangular(self.L, self.b[self.idx], lower=True, check_finite=False)
        return scipy.linalg.solve_triangular(self.L.T, y, lower=False, check_finite=False)


def _residual(design, w, target):
    diff = design.distances(w) - target
    return float((diff[design._p, design._q] ** 2).sum())


def fit_split_weights(ordering: CircularOrdering, d: DistanceMatrix, tol: float = DEFAULT_NNLS_TOL,
                      max_iter: int | None = None) -> NNLSFit:
    """Lawson-Hanson NNLS for the weights of every arc split.

    Starts from all weights zero and moves the arc with the most negative
    gradient into the passive set each outer iteration; infeasible
    restricted solutions are handled by the usual interpolation step.
    ``tol`` bounds the KKT gradient relative to ``max(1, |A^T d|_inf)``.

    Raises
    ------
    ConvergenceError
        If more than ``max_iter`` (default ``3 m``) outer iterations run.
    """
    n = len(ordering)
    if n != d.n:
        raise ArchgenError("ordering and distance matrix cover different numbers of taxa")
    design = CircularDesign(n)
    m = design.m
    if m == 0:
        return NNLSFit(np.zeros(0), 0.0, 0, np.zeros(0), [0.0])
    max_iter = 3 * m if max_iter is None else max_iter
    target = _positional(d, ordering)
    b = design.transpose(target)
    eps = tol * max(1.0, float(np.abs(b).max()))

    def gradient(w):
        return design.transpose(design.distances(w) - target)

    w = np.zeros(m)
    passive = _PassiveSet(design, b)
    in_passive = np.zeros(m, dtype=bool)
    blocked = np.zeros(m, dtype=bool)
    history = [_residual(design, w, target)]
    iterations = 0
    while True:
        g = gradient(w)
        cand = np.where(in_passive | blocked, -np.inf, -g)
        t = int(cand.argmax())
        if cand[t] <= eps:
            break
        iterations += 1
        if iterations > max_iter:
            raise ConvergenceError(f"NNLS did not converge in {max_iter} iterations "
                                   f"(residual {history[-1]:.3g})", residual=history[-1])
        if not passive.add(t):
            blocked[t] = True
            continue
        in_passive[t] = True
        while True:
            idx = np.array(passive.idx)
            s = passive.solve()
            if (s > 0).all():
                w = np.zeros(m)
                w[idx] = s
                break
            wi = w[idx]
            neg = s <= 0
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(neg, wi / (wi - s), np.inf)
            j = int(ratios.argmin())
            alpha = float(ratios[j])
            wi = wi + alpha * (s - wi)
            wi[j] = 0.0
            drop = idx[wi <= 0.0]
            w = np.zeros(m)
            w[idx] = np.maximum(wi, 0.0)
            passive.remove(drop)
            in_passive[drop] = False
            if not len(passive):
                break
        res = _residual(design, w, target)
        if w[t] == 0.0 and not in_passive[t]:
            # entering arc expelled at once: gradient sign was round-off
            blocked[t] = True
        else:
            blocked[:] = False
        history.append(res)
    return NNLSFit(w, history[-1], iterations, gradient(w), history)


def nnls_weights(ordering: CircularOrdering, d: DistanceMatrix, tol: float = DEFAULT_NNLS_TOL,
                 max_iter: int | None = None) -> np.ndarray:
    """Non-negative least-squares weights for every arc split (arc order)."""
    return fit_split_weights(ordering, d, tol, max_iter).weights


# -- ordering ----------------------------------------------------------------

def nnet_ordering(d: DistanceMatrix) -> CircularOrdering:
    """Circular ordering by neighbor-net agglomeration.

    Clusters hold one or two active nodes (the two ends of the cluster's
    path of taxa).  Each round picks the cluster pair minimising the
    cluster-averaged Q criterion, then the node pair minimising the node
    level criterion within those clusters; joined clusters with three or
    four nodes are reduced back to two nodes by the 3-to-2 reduction with
    coefficients 2/3 and 1/3.  Ties go to the smallest index.
    """
    n = d.n
    if not np.isfinite(d.d).all():
        raise ArchgenError("distance matrix has non-finite entries")
    if n <= 3:
        return CircularOrdering(range(n))
    size = 3 * n
    D = np.zeros((size, size))
    D[:n, :n] = d.d
    next_id = n
    # each cluster: [nodes (left end first), path of taxa]
    clusters = [[[i], [i]] for i in range(n)]

    def reduce3(x, y, z):
        nonlocal next_id
        u, v = next_id, next_id + 1
        next_id += 2
        D[u] = (2.0 / 3.0) * D[x] + (1.0 / 3.0) * D[y]
        D[v] = (1.0 / 3.0) * D[y] + (2.0 / 3.0) * D[z]
        D[:, u] = D[u]
        D[:, v] = D[v]
        D[u, v] = D[v, u] = (D[x, y] + D[y, z] + D[x, z]) / 3.0
        D[u, u] = D[v, v] = 0.0
        return u, v

    while sum(len(c[0]) for c in clusters) > 3:
        c = len(clusters)
        if c == 2:
            (a0, a1), pa = clusters[0]
            (b0, b1), pb = clusters[1]
            if D[a1, b0] + D[a0, b1] <= D[a1, b1] + D[a0, b0]:
                clusters = [[[a0, b1], pa + pb]]
            else:
                clusters = [[[a0, b0], pa + pb[::-1]]]
            break
        first = np.array([cl[0][0] for cl in clusters])
        last = np.array([cl[0][-1] for cl in clusters])
        Dc = (D[np.ix_(first, first)] + D[np.ix_(first, last)]
              + D[np.ix_(last, first)] + D[np.ix_(last, last)]) / 4.0
        np.fill_diagonal(Dc, 0.0)
        S = Dc.sum(axis=1)
        Q = (c - 2) * Dc - S[:, None] - S[None, :]
        iu = np.triu_indices(c, k=1)
        k = int(np.argmin(Q[iu]))
        ci, cj = int(iu[0][k]), int(iu[1][k])
        Ci, Cj = clusters[ci], clusters[cj]
        if len(Ci[0]) == 1 and len(Cj[0]) == 1:
            x, y = Ci[0][0], Cj[0][0]
        else:
            active = [node for cl in clusters for node in cl[0]]
            joint = set(Ci[0]) | set(Cj[0])
            coef = np.array([1.0 if (p in joint or len(cl[0]) == 1) else 0.5
                             for cl in clusters for p in cl[0]])
            mhat = c + len(Ci[0]) + len(Cj[0]) - 2
            R = {z: float(D[z, active] @ coef) for z in joint}
            best = None
            for xx in sorted(Ci[0]):
                for yy in sorted(Cj[0]):
                    q = (mhat - 2) * D[xx, yy] - R[xx] - R[yy]
                    if best is None or q < best[0]:
                        best = (q, xx, yy)
            _, x, y = best
        nodes_i, path_i = Ci
        nodes_j, path_j = Cj
        if nodes_i[-1] != x:
            nodes_i, path_i = nodes_i[::-1], path_i[::-1]
        if nodes_j[0] != y:
            nodes_j, path_j = nodes_j[::-1], path_j[::-1]
        chain = nodes_i + nodes_j
        if len(chain) == 3:
            chain = list(reduce3(*chain))
        elif len(chain) == 4:
            u, v = reduce3(*chain[:3])
            chain = list(reduce3(u, v, chain[3]))
        clusters[ci] = [chain, path_i + path_j]
        del clusters[cj]
    cycle = [t for cl in clusters for t in cl[1]]
    return CircularOrdering(cycle)


# -- composition -------------------------------------------------------------

def neighbor_net(d: DistanceMatrix, weight_threshold: float = DEFAULT_WEIGHT_THRESHOLD,
                 tol: float = DEFAULT_NNLS_TOL) -> SplitSystem:
    """Ordering, circular splits, NNLS weights; splits at or below the
    threshold are dropped."""
    if d.n < 1:
        raise SizeError("neighbor-net needs at least one taxon")
    ordering = nnet_ordering(d)
    w = nnls_weights(ordering, d, tol=tol)
    kept = [Split(side, float(wi)) for side, wi in zip(circular_splits(ordering), w)
            if wi > weight_threshold]
    return SplitSystem(d.labels, tuple(kept), ordering)


def ordering_from_labels(labels: Sequence[str], cycle_labels: Sequence[str]) -> CircularOrdering:
    idx = {lab: i for i, lab in enumerate(labels)}
    return CircularOrdering([idx[c] for c in cycle_labels])


# -- delta score -------------------------------------------------------------

def _quartet_deltas(D: np.ndarray, q: np.ndarray) -> np.ndarray:
    i, j, k, l = q.T
    sums = np.stack([D[i, j] + D[k, l], D[i, k] + D[j, l], D[i, l] + D[j, k]], axis=1)
    sums.sort(axis=1)
    m3, m2, m1 = sums[:, 0], sums[:, 1], sums[:, 2]
    eps = 1e-12 * np.maximum(1.0, np.abs(m1))
    spread = m1 - m3
    top = np.where(m1 - m2 <= eps, 0.0, m1 - m2)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(spread <= eps, 0.0, top / spread)


def delta_score(d: DistanceMatrix, sample: int | None = None, seed: int = 0) -> float:
    """Mean quartet delta ``(m1 - m2) / (m1 - m3)`` of the three pair sums.

    All quartets are used for up to 20 taxa; above that ``sample`` quartets
    (default 10 000) are drawn uniformly with a seeded generator.  Quartets
    whose sums are all equal contribute 0.
    """
    n = d.n
    if n < 4:
        raise SizeError("delta score needs at least 4 taxa")
    D = np.asarray(d.d)
    if n <= DELTA_EXHAUSTIVE_MAX:
        q = np.array(list(itertools.combinations(range(n), 4)), dtype=np.int64)
    else:
        count = DEFAULT_QUARTET_SAMPLE if sample is None else int(sample)
        if count < 1:
            raise ArchgenError("quartet sample size must be positive")
        rng = np.random.default_rng(seed)
        q = np.argsort(rng.random((count, n)), axis=1)[:, :4]
    return float(_quartet_deltas(D, q).mean())
