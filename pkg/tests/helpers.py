"""Random corpora shared by the test modules."""
import numpy as np

from archgen.core import DEFAULT_CATALOG, DistanceMatrix, TraitMatrix
from archgen.neighbornet import CircularOrdering, Split, SplitSystem, arcs
from archgen.njtree import PhyloTree


def labels(n, prefix="t"):
    return tuple(f"{prefix}{i}" for i in range(n))


def random_tree(n, rng, lo=0.1, hi=2.0):
    """Unrooted binary tree: start from a 3-star and attach leaves to random edges."""
    if n == 2:
        return PhyloTree(labels(2), ((0, 1, float(rng.uniform(lo, hi))),))
    edges = [(0, n), (1, n), (2, n)]
    nxt = n + 1
    for leaf in range(3, n):
        u, v = edges.pop(int(rng.integers(len(edges))))
        edges += [(u, nxt), (nxt, v), (leaf, nxt)]
        nxt += 1
    lengths = rng.uniform(lo, hi, len(edges))
    return PhyloTree(labels(n), tuple((u, v, float(w)) for (u, v), w in zip(edges, lengths)))


def random_circular(n, rng, lo=0.1, hi=1.0, density=0.5):
    """Random subset of the arc splits of a random cycle, weights uniform in [lo, hi]."""
    o = CircularOrdering(rng.permutation(n))
    keep = rng.random(len(arcs(n))) < density
    splits = [Split(o.side_of(int(a), int(b)), float(rng.uniform(lo, hi)))
              for (a, b), k in zip(arcs(n), keep) if k]
    return SplitSystem(labels(n), tuple(splits), o)


def box_metric():
    """Unit square A-B-C-D: adjacent corners 1 apart, diagonals 2."""
    d = np.array([[0, 1, 2, 1],
                  [1, 0, 1, 2],
                  [2, 1, 0, 1],
                  [1, 2, 1, 0]], dtype=float)
    return DistanceMatrix(("A", "B", "C", "D"), d)


def tree_corpus(sizes, per_size, seed, lo=0.1, hi=2.0):
    rng = np.random.default_rng(seed)
    return [random_tree(n, rng, lo, hi) for n in sizes for _ in range(per_size)]


def circular_corpus(count, seed, n_range=(4, 15)):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        out.append(random_circular(n, rng))
    return out


def planted_buildings(seed=0, total=1277, counts=(60, 41, 33, 20, 15, 12, 9, 8, 8),
                      singles=7, variants=19):
    """Synthetic corpus with known duplicate structure.

    Returns ``(matrix, planted)``: ``planted`` maps each vector string seen
    ``counts[i]`` times to its count.  Beyond the planted vectors, distinct
    vectors appear at most ``singles`` times, and ``variants`` rows are
    all-zero.
    """
    rng = np.random.default_rng(seed)
    k = len(DEFAULT_CATALOG)
    used = {"0" * k}

    def fresh():
        while True:
            v = "".join(rng.choice(["0", "1"], size=k))
            if v not in used:
                used.add(v)
                return v

    rows, planted = [], {}
    for c in counts:
        v = fresh()
        planted[v] = c
        rows += [v] * c
    rows += ["0" * k] * variants
    while len(rows) < total:
        c = int(min(rng.integers(1, singles + 1), total - len(rows)))
        rows += [fresh()] * c
    order = rng.permutation(len(rows))
    rows = [rows[i] for i in order]
    bits = [[int(ch) for ch in r] for r in rows]
    ids = [f"b{i:04d}" for i in range(len(rows))]
    return TraitMatrix(DEFAULT_CATALOG, ids, bits), planted
