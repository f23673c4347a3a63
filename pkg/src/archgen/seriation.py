"""Seriation: the line model.

Orders taxa so that every trait's presences are as contiguous as possible.
The score of an order is the number of embedded absences (zeros strictly
between the first and last presence of a trait, summed over traits).
"""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DistanceMatrix, TraitMatrix
from .errors import ArchgenError, SizeError

BRUTE_FORCE_LIMIT = 10
DEFAULT_RESTARTS = 8


@dataclass(frozen=True)
class SeriationResult:
    order: tuple[int, ...]
    criterion: int
    method: str

    def taxa(self, m: TraitMatrix) -> list[str]:
        return [m.taxa[i] for i in self.order]


def _check_order(order, n):
    order = np.asarray(order, dtype=np.int64)
    if order.shape != (n,) or not np.array_equal(np.sort(order), np.arange(n)):
        raise ArchgenError(f"order {list(order)} is not a permutation of 0..{n - 1}")
    return order


def _batch_criterion(bits: np.ndarray, orders: np.ndarray) -> np.ndarray:
    """Embedded-absence counts for a batch of orders (rows of ``orders``)."""
    x = bits[orders]                       # (batch, n, traits)
    n = orders.shape[1]
    present = x.any(axis=1)
    first = x.argmax(axis=1)
    last = n - 1 - x[:, ::-1, :].argmax(axis=1)
    count = x.sum(axis=1, dtype=np.int64)
    span = np.where(present, last - first + 1 - count, 0)
    return span.sum(axis=1)


def petrie_criterion(m: TraitMatrix, order: Sequence[int]) -> int:
    order = _check_order(order, m.n_taxa)
    if m.n_taxa == 0:
        return 0
    return int(_batch_criterion(m.bits.astype(bool), order[None, :])[0])


def _canonical(order):
    order = tuple(int(i) for i in order)
    if len(order) > 1 and order[0] > order[-1]:
        order = order[::-1]
    return order


def brute_force_seriate(m: TraitMatrix, chunk: int = 50_000) -> SeriationResult:
    """Exhaustive minimum over all orders with first < last.

    Permutations are enumerated in lexicographic order, so the first optimum
    found is the lexicographically smallest canonical one.
    """
    n = m.n_taxa
    if n > BRUTE_FORCE_LIMIT:
        raise SizeError(f"brute force seriation limited to {BRUTE_FORCE_LIMIT} taxa, got {n}")
    if n < 2:
        return SeriationResult(tuple(range(n)), 0, "brute-force")
    bits = m.bits.astype(bool)
    best_val, best_order = None, None
    perms = (p for p in itertools.permutations(range(n)) if p[0] < p[-1])
    while True:
        block = list(itertools.islice(perms, chunk))
        if not block:
            break
        arr = np.array(block, dtype=np.int64)
        crit = _batch_criterion(bits, arr)
        k = int(crit.argmin())
        if best_val is None or crit[k] < best_val:
            best_val, best_order = int(crit[k]), tuple(block[k])
    return SeriationResult(best_order, best_val, "brute-force")


@functools.lru_cache(maxsize=32)
def _move_table(n: int) -> np.ndarray:
    """Position permutations for every swap, segment reversal and relocation."""
    ident = np.arange(n)
    out = []
    for i in range(n - 1):
        for j in range(i + 1, n):
            s = ident.copy()
            s[i], s[j] = s[j], s[i]
            out.append(s)
            if j - i >= 2:
                r = ident.copy()
                r[i:j + 1] = r[i:j + 1][::-1]
                out.append(r)
    for i in range(n):
        rest = np.delete(ident, i)
        for j in range(n):
            if j != i and j != i - 1:
                out.append(np.insert(rest, j, i))
    table = np.array(out, dtype=np.int64).reshape(-1, n)
    table.setflags(write=False)
    return table


def _neighbourhood(order: np.ndarray) -> np.ndarray:
    """All orders one swap, one segment reversal or one relocation away."""
    return order[_move_table(order.size)]


def local_search(bits: np.ndarray, order: np.ndarray) -> tuple[np.ndarray, int]:
    """Best-improvement descent until no move strictly lowers the criterion."""
    order = np.asarray(order, dtype=np.int64)
    current = int(_batch_criterion(bits, order[None, :])[0])
    while current > 0:
        moves = _neighbourhood(order)
        crit = _batch_criterion(bits, moves)
        k = int(crit.argmin())
        if crit[k] >= current:
            break
        order, current = moves[k], int(crit[k])
    return order, current


def spectral_order(m: TraitMatrix) -> np.ndarray:
    """Sort taxa by the Fiedler vector of the similarity graph Laplacian.

    Similarity is the number of matching traits.  Ties keep index order.
    """
    x = m.bits.astype(float)
    k = m.n_traits
    hamming = x @ (1 - x).T + (1 - x) @ x.T
    sim = k - hamming
    np.fill_diagonal(sim, 0.0)
    lap = np.diag(sim.sum(axis=1)) - sim
    _, vecs = np.linalg.eigh(lap)
    fiedler = vecs[:, 1]
    # eigenvector sign is arbitrary; fix it so the first taxon's value is <= 0
    if fiedler[0] > 0 or (fiedler[0] == 0 and fiedler.sum() < 0):
        fiedler = -fiedler
    fiedler = np.round(fiedler, 12)
    return np.argsort(fiedler, kind="stable")


def seriate(m: TraitMatrix, restarts: int = DEFAULT_RESTARTS, seed: int = 0) -> SeriationResult:
    """Spectral start plus local search, best of ``restarts`` runs.

    Run 0 starts from the spectral order; each further run starts from a
    seeded random shuffle.  The lowest criterion wins, ties going to the
    earliest run, and the order is reported with first index < last index.
    """
    n = m.n_taxa
    if n < 2:
        raise SizeError("seriation needs at least 2 taxa")
    bits = m.bits.astype(bool)
    if (m.bits == m.bits[0]).all():
        return SeriationResult(tuple(range(n)), 0, "spectral")
    rng = np.random.default_rng(seed)
    init = spectral_order(m)
    best_order, best = local_search(bits, init)
    for _ in range(1, max(1, restarts)):
        if best == 0:
            break
        start = rng.permutation(n)
        order, crit = local_search(bits, start)
        if crit < best:
            best_order, best = order, crit
    return SeriationResult(_canonical(best_order), best, "local-search")


def segment_order(result: SeriationResult, d: DistanceMatrix, k: int) -> list[list[str]]:
    """Cut the seriation at its k-1 widest adjacent gaps.

    Ties between equal gaps go to the earlier position.
    """
    n = len(result.order)
    if not 1 <= k <= n:
        raise ArchgenError(f"number of groups must be in 1..{n}, got {k}")
    order = list(result.order)
    gaps = [d.d[order[i], order[i + 1]] for i in range(n - 1)]
    cuts = sorted(sorted(range(n - 1), key=lambda i: (-gaps[i], i))[:k - 1])
    groups, start = [], 0
    for c in cuts:
        groups.append([d.labels[i] for i in order[start:c + 1]])
        start = c + 1
    groups.append([d.labels[i] for i in order[start:]])
    return groups

