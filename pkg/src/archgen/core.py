"""Trait and distance matrices shared by every analysis.

A :class:`TraitMatrix` is a taxa-by-traits presence/absence table; a
:class:`DistanceMatrix` holds symmetric pairwise dissimilarities between the
same taxa.  Both are immutable: their numpy buffers are flagged read-only.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ArchgenError, DimensionError, EmptyInputError, InsufficientDataError

# Order defines bit positions in every encoded facade string.
SHOPHOUSE_TRAITS = (
    "main pilaster",
    "fanlight",
    "secondary pilaster",
    "festoon",
    "modillion",
    "chinese plaque",
    "chinese decorative panel",
    "malay transom",
    "fretwork fascia",
    "majolica tiles",
    "long window",
    "modern window",
    "shades",
    "stepping parapet",
)

METRICS = ("hamming", "hamming-normalized", "jaccard")
DEFAULT_METRIC = "hamming-normalized"


@dataclass(frozen=True)
class TraitCatalog:
    names: tuple[str, ...]

    def __init__(self, names: Iterable[str]):
        names = tuple(names)
        if not names:
            raise EmptyInputError("trait catalog is empty")
        for name in names:
            if not isinstance(name, str) or not name:
                raise ArchgenError(f"invalid trait name {name!r}")
        seen = set()
        dupes = [n for n in names if n in seen or seen.add(n)]
        if dupes:
            raise ArchgenError(f"duplicate trait names: {', '.join(dupes)}")
        object.__setattr__(self, "names", names)

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ArchgenError(f"unknown trait {name!r}") from None


DEFAULT_CATALOG = TraitCatalog(SHOPHOUSE_TRAITS)


@dataclass(frozen=True, order=True)
class TraitVector:
    """Fixed-length presence/absence vector; orders lexicographically by bits."""

    bits: tuple[int, ...]

    def __init__(self, bits: Iterable[int]):
        bits = tuple(int(b) for b in bits)
        if any(b not in (0, 1) for b in bits):
            raise ArchgenError(f"trait bits must be 0 or 1, got {bits}")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_string(cls, s: str) -> "TraitVector":
        return cls(int(c) for c in s)

    @classmethod
    def zeros(cls, length: int) -> "TraitVector":
        return cls((0,) * length)

    def __len__(self):
        return len(self.bits)

    def __str__(self):
        return "".join(map(str, self.bits))

    def is_empty(self) -> bool:
        return not any(self.bits)

    def as_array(self) -> np.ndarray:
        return np.array(self.bits, dtype=np.uint8)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


class TraitMatrix:
    """Taxa x traits binary matrix.

    Parameters
    ----------
    catalog : TraitCatalog or sequence of str
        Trait names; column order.
    taxa : sequence of str
        Unique row labels.
    rows : array-like of shape (len(taxa), len(catalog))
        0/1 entries, or a sequence of :class:`TraitVector`.
    """

    __slots__ = ("catalog", "taxa", "bits")

    def __init__(self, catalog, taxa: Sequence[str], rows):
        if not isinstance(catalog, TraitCatalog):
            catalog = TraitCatalog(catalog)
        taxa = tuple(str(t) for t in taxa)
        if len(set(taxa)) != len(taxa):
            seen = set()
            dupes = sorted({t for t in taxa if t in seen or seen.add(t)})
            raise ArchgenError(f"duplicate taxon labels: {', '.join(dupes)}")
        rows = [r.bits if isinstance(r, TraitVector) else r for r in rows]
        bits = np.asarray(rows, dtype=np.int64).reshape(len(rows), -1) if len(rows) else \
            np.zeros((0, len(catalog)), dtype=np.int64)
        if bits.shape[0] != len(taxa):
            raise DimensionError(f"{bits.shape[0]} rows for {len(taxa)} taxa")
        if bits.shape[1] != len(catalog):
            raise DimensionError(f"rows have {bits.shape[1]} traits, catalog has {len(catalog)}")
        if bits.size and not np.isin(bits, (0, 1)).all():
            raise ArchgenError("trait matrix entries must be 0 or 1")
        object.__setattr__(self, "catalog", catalog)
        object.__setattr__(self, "taxa", taxa)
        object.__setattr__(self, "bits", _frozen(bits.astype(np.uint8)))

    def __setattr__(self, name, value):
        raise AttributeError("TraitMatrix is immutable")

    @property
    def n_taxa(self) -> int:
        return len(self.taxa)

    @property
    def n_traits(self) -> int:
        return len(self.catalog)

    @property
    def shape(self):
        return self.bits.shape

    def row(self, i: int) -> TraitVector:
        return TraitVector(self.bits[i].tolist())

    def rows(self) -> list[TraitVector]:
        return [TraitVector(r) for r in self.bits.tolist()]

    def take(self, indices: Sequence[int]) -> "TraitMatrix":
        indices = list(indices)
        return TraitMatrix(self.catalog, [self.taxa[i] for i in indices], self.bits[indices])

    def __eq__(self, other):
        if not isinstance(other, TraitMatrix):
            return NotImplemented
        return (self.catalog == other.catalog and self.taxa == other.taxa
                and np.array_equal(self.bits, other.bits))

    def __repr__(self):
        return f"TraitMatrix({self.n_taxa} taxa x {self.n_traits} traits)"


class DistanceMatrix:
    """Symmetric, non-negative, zero-diagonal dissimilarities between labelled taxa."""

    __slots__ = ("labels", "d")

    def __init__(self, labels: Sequence[str], d, *, atol: float = 1e-12):
        labels = tuple(str(x) for x in labels)
        d = np.asarray(d, dtype=float)
        n = len(labels)
        if d.shape != (n, n):
            raise DimensionError(f"distance matrix shape {d.shape} does not match {n} labels")
        if len(set(labels)) != n:
            raise ArchgenError("duplicate labels in distance matrix")
        if not np.isfinite(d).all():
            raise ArchgenError("distance matrix has non-finite entries")
        if n and np.abs(np.diag(d)).max() > atol:
            raise ArchgenError("distance matrix has a non-zero diagonal")
        if n and np.abs(d - d.T).max() > atol * max(1.0, np.abs(d).max()):
            raise ArchgenError("distance matrix is not symmetric")
        if n and d.min() < -atol:
            raise ArchgenError("distance matrix has negative entries")
        d = (d + d.T) / 2.0
        np.fill_diagonal(d, 0.0)
        np.maximum(d, 0.0, out=d)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "d", _frozen(d))

    def __setattr__(self, name, value):
        raise AttributeError("DistanceMatrix is immutable")

    def __len__(self):
        return len(self.labels)

    @property
    def n(self) -> int:
        return len(self.labels)

    def __getitem__(self, key):
        i, j = key
        if isinstance(i, str):
            i = self.labels.index(i)
        if isinstance(j, str):
            j = self.labels.index(j)
        return float(self.d[i, j])

    def permute(self, order: Sequence[int]) -> "DistanceMatrix":
        order = list(order)
        return DistanceMatrix([self.labels[i] for i in order], self.d[np.ix_(order, order)])

    def scaled(self, factor: float) -> "DistanceMatrix":
        return DistanceMatrix(self.labels, self.d * factor)

    def __eq__(self, other):
        if not isinstance(other, DistanceMatrix):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.d, other.d)

    def __repr__(self):
        return f"DistanceMatrix(n={self.n})"


def _bits(v) -> np.ndarray:
    if isinstance(v, TraitVector):
        return v.as_array()
    return np.asarray(v, dtype=np.uint8)


def _check_pair(a, b):
    a, b = _bits(a), _bits(b)
    if a.shape != b.shape:
        raise DimensionError(f"vector lengths differ: {a.size} vs {b.size}")
    return a, b


def hamming_distance(a, b, normalized: bool = False) -> float:
    a, b = _check_pair(a, b)
    diff = int(np.count_nonzero(a != b))
    if normalized:
        return diff / a.size if a.size else 0.0
    return float(diff)


def jaccard_distance(a, b) -> float:
    """``1 - |a and b| / |a or b|``; two all-zero vectors are at distance 0."""
    a, b = _check_pair(a, b)
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 0.0
    return 1.0 - np.count_nonzero(a & b) / union


def _pairwise(bits: np.ndarray, metric: str) -> np.ndarray:
    x = bits.astype(np.int64)
    both = x @ x.T
    ones = x.sum(axis=1)
    union = ones[:, None] + ones[None, :] - both
    diff = union - both
    if metric == "hamming":
        return diff.astype(float)
    if metric == "hamming-normalized":
        return diff / x.shape[1]
    if metric == "jaccard":
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(union > 0, diff / np.where(union > 0, union, 1), 0.0)
        return out
    raise ArchgenError(f"unknown metric {metric!r}; choose from {', '.join(METRICS)}")


def distance_matrix(m: TraitMatrix, metric: str = DEFAULT_METRIC) -> DistanceMatrix:
    if m.n_taxa == 0:
        raise EmptyInputError("trait matrix has no rows")
    return DistanceMatrix(m.taxa, _pairwise(m.bits, metric))


@dataclass(frozen=True)
class TraitFrequency:
    trait: str
    count: int
    percentage: float


def trait_frequencies(m: TraitMatrix) -> list[TraitFrequency]:
    """Per-trait presence counts and percentages of rows (rounded to 2 dp)."""
    if m.n_taxa == 0:
        raise EmptyInputError("trait matrix has no rows")
    counts = m.bits.sum(axis=0)
    return [
        TraitFrequency(name, int(c), round(100.0 * int(c) / m.n_taxa, 2))
        for name, c in zip(m.catalog.names, counts)
    ]


@dataclass(frozen=True)
class PhiResult:
    traits: tuple[str, ...]
    phi: np.ndarray
    constant: tuple[str, ...]


def phi_correlation(m: TraitMatrix) -> PhiResult:
    """Phi coefficient (Pearson on binary columns) between every pair of traits.

    Constant columns have zero variance; their row and column (diagonal
    included) are set to 0 and the trait names are reported in ``constant``.
    """
    if m.n_taxa < 2:
        raise InsufficientDataError("phi correlation needs at least 2 rows")
    x = m.bits.astype(float)
    n = x.shape[0]
    p = x.mean(axis=0)
    cov = (x.T @ x) / n - np.outer(p, p)
    var = p * (1.0 - p)
    constant = var <= 0.0
    sd = np.sqrt(np.where(constant, 1.0, var))
    phi = cov / np.outer(sd, sd)
    phi[constant, :] = 0.0
    phi[:, constant] = 0.0
    np.fill_diagonal(phi, np.where(constant, 0.0, 1.0))
    phi = np.clip(phi, -1.0, 1.0)
    return PhiResult(m.catalog.names, _frozen(phi),
                     tuple(name for name, c in zip(m.catalog.names, constant) if c))
