"""Synthetic trait corpora under line, tree and network transmission.

line
    One lineage; each generation replaces its parent, flipping every trait
    with probability ``flip_rate``, and every generation is sampled.
tree
    Each generation one random active lineage splits in two and each
    daughter flips every trait with probability ``flip_rate``, so flips
    happen at births as in line mode.  The surviving lineages are sampled.
network
    Tree mode plus borrowing: after mutation, each active lineage with
    probability ``borrow_rate`` copies one random trait from another random
    active lineage.  Borrowing draws from its own random stream, so a zero
    borrow rate reproduces tree mode exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import DEFAULT_CATALOG, TraitCatalog, TraitMatrix, distance_matrix
from .errors import ArchgenError
from .neighbornet import delta_score
from .njtree import ls_fit, nj, signed_path_lengths
from .seriation import seriate

MODES = ("line", "tree", "network")


@dataclass(frozen=True)
class SimConfig:
    mode: str = "tree"
    n_taxa: int = 25
    n_traits: int = 14
    flip_rate: float = 0.05
    borrow_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ArchgenError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n_taxa < 4:
            raise ArchgenError(f"n_taxa must be >= 4, got {self.n_taxa}")
        if self.n_traits < 4:
            raise ArchgenError(f"n_traits must be >= 4, got {self.n_traits}")
        if not 0.0 <= self.flip_rate < 1.0:
            raise ArchgenError(f"flip_rate must be in [0, 1), got {self.flip_rate}")
        if not 0.0 <= self.borrow_rate < 1.0:
            raise ArchgenError(f"borrow_rate must be in [0, 1), got {self.borrow_rate}")
        if self.borrow_rate and self.mode != "network":
            raise ArchgenError("borrow_rate must be 0 unless mode is 'network'")


@dataclass(frozen=True)
class Event:
    generation: int
    kind: str              # birth, mutation or borrow
    lineage: int
    source: int = -1       # parent for births, donor for borrows
    trait: int = -1

    def __str__(self):
        return f"{self.generation} {self.kind} {self.lineage} {self.source} {self.trait}"


@dataclass(frozen=True)
class SimResult:
    config: SimConfig
    root: tuple[int, ...]
    matrix: TraitMatrix
    sampled: tuple[int, ...]                       # lineage id of each matrix row
    history: tuple[Event, ...]
    parents: dict = field(default_factory=dict)    # lineage -> parent lineage

    def truth_lines(self) -> list[str]:
        """Generating structure as line-oriented text."""
        label = dict(zip(self.sampled, self.matrix.taxa))
        name = lambda x: label.get(x, f"L{x}")
        if self.config.mode == "line":
            return ["order " + " ".join(self.matrix.taxa)]
        out = [f"edge {name(p)} {name(c)}" for c, p in sorted(self.parents.items())]
        out += [f"borrow {e.generation} {name(e.lineage)} {name(e.source)} {e.trait}"
                for e in self.history if e.kind == "borrow"]
        return out

    def borrow_count(self) -> int:
        return sum(1 for e in self.history if e.kind == "borrow")


def _labels(n):
    width = len(str(n))
    return [f"t{i + 1:0{width}d}" for i in range(n)]


def replay(root, history, sampled, catalog: TraitCatalog, labels) -> TraitMatrix:
    """Rebuild the sampled matrix from the root vector and the event log."""
    state = {0: np.array(root, dtype=np.uint8)}
    for e in history:
        if e.kind == "birth":
            state[e.lineage] = state[e.source].copy()
        elif e.kind == "mutation":
            state[e.lineage][e.trait] ^= 1
        elif e.kind == "borrow":
            state[e.lineage][e.trait] = state[e.source][e.trait]
        else:
            raise ArchgenError(f"unknown event kind {e.kind!r}")
    return TraitMatrix(catalog, labels, np.array([state[x] for x in sampled]))


def _catalog(n_traits):
    if n_traits == len(DEFAULT_CATALOG):
        return DEFAULT_CATALOG
    return TraitCatalog(f"trait{i + 1}" for i in range(n_traits))


def simulate(cfg: SimConfig) -> SimResult:
    main_seq, borrow_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    rng = np.random.default_rng(main_seq)
    borrow_rng = np.random.default_rng(borrow_seq)
    k = cfg.n_traits
    root = rng.integers(0, 2, size=k).astype(np.uint8)
    state = {0: root.copy()}
    history: list[Event] = []
    parents = {}
    next_id = 1

    def mutate(gen, lineages):
        flips = rng.random((len(lineages), k)) < cfg.flip_rate
        for row, x in zip(flips, lineages):
            for t in np.flatnonzero(row):
                state[x][t] ^= 1
                history.append(Event(gen, "mutation", x, -1, int(t)))

    if cfg.mode == "line":
        sampled = [0]
        for gen in range(1, cfg.n_taxa):
            child, parent = next_id, sampled[-1]
            next_id += 1
            state[child] = state[parent].copy()
            parents[child] = parent
            history.append(Event(gen, "birth", child, parent))
            mutate(gen, [child])
            sampled.append(child)
    else:
        active = [0]
        for gen in range(1, cfg.n_taxa):
            pick = int(rng.integers(len(active)))
            parent = active.pop(pick)
            for _ in range(2):
                state[next_id] = state[parent].copy()
                parents[next_id] = parent
                history.append(Event(gen, "birth", next_id, parent))
                active.append(next_id)
                next_id += 1
            mutate(gen, active[-2:])
            active.sort()
            if cfg.borrow_rate > 0:
                for x in active:
                    if borrow_rng.random() >= cfg.borrow_rate:
                        continue
                    others = [y for y in active if y != x]
                    donor = others[int(borrow_rng.integers(len(others)))]
                    t = int(borrow_rng.integers(k))
                    state[x][t] = state[donor][t]
                    history.append(Event(gen, "borrow", x, donor, t))
        sampled = active
    catalog = _catalog(k)
    labels = _labels(cfg.n_taxa)
    matrix = TraitMatrix(catalog, labels, np.array([state[x] for x in sampled]))
    return SimResult(cfg, tuple(int(b) for b in root), matrix, tuple(sampled), tuple(history), parents)


@dataclass(frozen=True)
class Diagnosis:
    delta: float
    tree_fit: float
    seriation_criterion: int

    def as_text(self) -> str:
        return (f"delta={self.delta!r}\ntree_fit={self.tree_fit!r}\n"
                f"seriation_criterion={self.seriation_criterion}\n")


def diagnose(matrix: TraitMatrix, seed: int = 0, metric: str | None = None) -> Diagnosis:
    """Delta score, NJ least-squares fit and seriation criterion."""
    if matrix.n_taxa < 4:
        raise ArchgenError("diagnosis needs at least 4 taxa")
    d = distance_matrix(matrix) if metric is None else distance_matrix(matrix, metric)
    tree = nj(d)
    return Diagnosis(delta_score(d, seed=seed), ls_fit(d, signed_path_lengths(tree)),
                     seriate(matrix, seed=seed).criterion)
