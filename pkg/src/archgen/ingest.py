"""From detector output and trait tables to typed taxa.

The pipeline is: detection records -> one presence/absence vector per
building -> variant flagging (all-zero vectors) -> duplicate counting ->
type catalog of vectors seen at least ``threshold`` times.  The
frequency-stratified train/validation/test splitter for the detector's
annotated instances also lives here.
"""
from __future__ import annotations

import csv
import io
import json
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import DEFAULT_CATALOG, DistanceMatrix, TraitCatalog, TraitMatrix, TraitVector
from .errors import ArchgenError, ParseError

BUILDING_CLASS = "building"
DEFAULT_TAU = 0.5
DEFAULT_TYPE_THRESHOLD = 8


# -- trait CSV ---------------------------------------------------------------

def read_trait_csv(path, catalog: TraitCatalog | None = None) -> TraitMatrix:
    """Parse ``building_id,<trait...>`` rows of 0/1 cells.

    If ``catalog`` is given the header must list exactly its traits in order.
    """
    text = Path(path).read_text(encoding="utf-8")
    return parse_trait_csv(text, catalog)


def parse_trait_csv(text: str, catalog: TraitCatalog | None = None) -> TraitMatrix:
    rows = list(csv.reader(io.StringIO(text, newline="")))
    if not rows:
        raise ParseError("empty trait file", line=1)
    header = rows[0]
    if len(header) < 2 or header[0] != "building_id":
        raise ParseError("header must start with 'building_id' followed by trait names", line=1)
    try:
        file_catalog = TraitCatalog(header[1:])
    except ArchgenError as exc:
        raise ParseError(str(exc), line=1) from None
    if catalog is not None and file_catalog != catalog:
        raise ParseError("header traits do not match the expected catalog", line=1)
    taxa, bits, seen = [], [], {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
        bid = row[0]
        if not bid:
            raise ParseError("empty building_id", line=lineno)
        if bid in seen:
            raise ParseError(f"duplicate building_id {bid!r} (first seen on line {seen[bid]})",
                             line=lineno)
        seen[bid] = lineno
        cells = row[1:]
        for name, cell in zip(file_catalog.names, cells):
            if cell not in ("0", "1"):
                raise ParseError(f"malformed cell {cell!r} in column {name!r}", line=lineno)
        taxa.append(bid)
        bits.append([int(c) for c in cells])
    return TraitMatrix(file_catalog, taxa, bits)


def format_trait_csv(m: TraitMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["building_id", *m.catalog.names])
    for taxon, row in zip(m.taxa, m.bits.tolist()):
        w.writerow([taxon, *row])
    return buf.getvalue()


def write_trait_csv(m: TraitMatrix, path) -> None:
    Path(path).write_text(format_trait_csv(m), encoding="utf-8", newline="")


# -- detections --------------------------------------------------------------

@dataclass(frozen=True)
class DetectionRecord:
    image_id: str
    building_id: str
    class_name: str
    confidence: float
    bbox: tuple[float, float, float, float]

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ArchgenError(f"confidence {self.confidence} outside [0, 1]")
        if len(self.bbox) != 4:
            raise ArchgenError("bbox must be [x, y, width, height]")
        if self.bbox[2] <= 0 or self.bbox[3] <= 0:
            raise ArchgenError(f"bbox width and height must be positive, got {self.bbox}")

    @property
    def center(self) -> tuple[float, float]:
        x, y, w, h = self.bbox
        return x + w / 2.0, y + h / 2.0

    def contains(self, point) -> bool:
        x, y, w, h = self.bbox
        px, py = point
        return x <= px <= x + w and y <= py <= y + h


def parse_detection_line(line: str, lineno: int | None = None) -> DetectionRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from None
    if not isinstance(obj, dict):
        raise ParseError("detection must be a JSON object", line=lineno)
    missing = [k for k in ("image_id", "building_id", "class", "confidence", "bbox") if k not in obj]
    if missing:
        raise ParseError(f"missing keys: {', '.join(missing)}", line=lineno)
    try:
        bbox = tuple(float(v) for v in obj["bbox"])
        return DetectionRecord(str(obj["image_id"]), str(obj["building_id"]), str(obj["class"]),
                               float(obj["confidence"]), bbox)
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), line=lineno) from None


def read_detections(path) -> list[DetectionRecord]:
    """Read newline-delimited JSON detections; blank lines are skipped."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                records.append(parse_detection_line(line, lineno))
    return records


def detections_to_vector(records: Sequence[DetectionRecord], catalog: TraitCatalog = DEFAULT_CATALOG,
                         tau: float = DEFAULT_TAU) -> TraitVector:
    """Presence vector for one building.

    A trait is present when at least one of its detections has confidence
    >= ``tau`` and, if the same image carries any ``building`` box, the
    detection's centre lies inside one of those boxes.  Building boxes gate
    regardless of their own confidence, which keeps the rule monotone in
    ``tau``.
    """
    if len({r.building_id for r in records}) > 1:
        raise ArchgenError("detections span more than one building_id")
    unknown = sorted({r.class_name for r in records
                      if r.class_name != BUILDING_CLASS and r.class_name not in catalog.names})
    if unknown:
        raise ArchgenError(f"unknown detection classes: {', '.join(unknown)}")
    frames = defaultdict(list)
    for r in records:
        if r.class_name == BUILDING_CLASS:
            frames[r.image_id].append(r)
    bits = [0] * len(catalog)
    for r in records:
        if r.class_name == BUILDING_CLASS or r.confidence < tau:
            continue
        boxes = frames.get(r.image_id)
        if boxes and not any(b.contains(r.center) for b in boxes):
            continue
        bits[catalog.index(r.class_name)] = 1
    return TraitVector(bits)


@dataclass(frozen=True)
class BuildingRecord:
    building_id: str
    vector: TraitVector
    source_images: tuple[str, ...] = ()
    variant_flag: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "variant_flag", self.vector.is_empty())


def buildings_from_detections(records: Iterable[DetectionRecord],
                              catalog: TraitCatalog = DEFAULT_CATALOG,
                              tau: float = DEFAULT_TAU) -> list[BuildingRecord]:
    """Group detections by building (sorted by id) and encode each one."""
    groups = defaultdict(list)
    for r in records:
        groups[r.building_id].append(r)
    out = []
    for bid in sorted(groups):
        recs = groups[bid]
        images = tuple(sorted({r.image_id for r in recs}))
        out.append(BuildingRecord(bid, detections_to_vector(recs, catalog, tau), images))
    return out


def buildings_from_matrix(m: TraitMatrix) -> list[BuildingRecord]:
    return [BuildingRecord(t, v) for t, v in zip(m.taxa, m.rows())]


def buildings_to_matrix(buildings: Sequence[BuildingRecord], catalog: TraitCatalog) -> TraitMatrix:
    return TraitMatrix(catalog, [b.building_id for b in buildings], [b.vector for b in buildings])


# -- type derivation ---------------------------------------------------------

@dataclass(frozen=True)
class TypeEntry:
    type_id: int
    vector: TraitVector
    count: int


@dataclass(frozen=True)
class TypeCatalog:
    entries: tuple[TypeEntry, ...]
    threshold: int

    def __len__(self):
        return len(self.entries)

    def to_matrix(self, catalog: TraitCatalog) -> TraitMatrix:
        """One row per type, labelled by its type id."""
        return TraitMatrix(catalog, [str(e.type_id) for e in self.entries],
                           [e.vector for e in self.entries])

    def lookup(self, vector: TraitVector) -> int | None:
        for e in self.entries:
            if e.vector == vector:
                return e.type_id
        return None


def derive_types(buildings: Sequence[BuildingRecord], threshold: int = DEFAULT_TYPE_THRESHOLD):
    """Keep distinct vectors seen at least ``threshold`` times.

    Variant (all-zero) buildings are excluded before counting.  Type ids run
    1..N by descending count, ties broken by the bit string.

    Returns
    -------
    (TypeCatalog, list of str)
        The catalog and the ids of non-variant buildings whose vector fell
        below the threshold, in input order.
    """
    if threshold < 1:
        raise ArchgenError("type threshold must be >= 1")
    typed = [b for b in buildings if not b.variant_flag]
    counts = Counter(b.vector for b in typed)
    kept = sorted(((c, v) for v, c in counts.items() if c >= threshold),
                  key=lambda cv: (-cv[0], cv[1].bits))
    entries = tuple(TypeEntry(i, v, c) for i, (c, v) in enumerate(kept, start=1))
    keep = {v for _, v in kept}
    leftovers = [b.building_id for b in typed if b.vector not in keep]
    return TypeCatalog(entries, threshold), leftovers


def format_type_catalog(types: TypeCatalog, catalog: TraitCatalog) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["type_id", "count", *catalog.names])
    for e in types.entries:
        w.writerow([e.type_id, e.count, *e.vector.bits])
    return buf.getvalue()


def parse_type_catalog(text: str) -> tuple[TypeCatalog, TraitCatalog]:
    rows = list(csv.reader(io.StringIO(text, newline="")))
    if not rows or rows[0][:2] != ["type_id", "count"]:
        raise ParseError("header must start with 'type_id,count'", line=1)
    catalog = TraitCatalog(rows[0][2:])
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(rows[0]) or any(c not in ("0", "1") for c in row[2:]):
            raise ParseError("malformed type row", line=lineno)
        try:
            entries.append(TypeEntry(int(row[0]), TraitVector(int(c) for c in row[2:]), int(row[1])))
        except ValueError:
            raise ParseError("type_id and count must be integers", line=lineno) from None
    threshold = min((e.count for e in entries), default=1)
    return TypeCatalog(tuple(entries), threshold), catalog


# -- stratified split --------------------------------------------------------

@dataclass(frozen=True)
class ClassSplit:
    train: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)


@dataclass(frozen=True)
class SplitAssignment:
    classes: Mapping[str, ClassSplit]

    def __getitem__(self, name):
        return self.classes[name]

    def rows(self):
        """``(class, instance_id, subset)`` triples in a stable order."""
        for name in sorted(self.classes):
            cs = self.classes[name]
            for subset, ids in (("train", cs.train), ("validation", cs.validation), ("test", cs.test)):
                for i in ids:
                    yield name, i, subset


def split_sizes(n: int, ratio: Sequence[int]) -> tuple[int, int, int]:
    """Floor the train and validation shares; the remainder goes to test."""
    train = n * ratio[0] // 100
    val = n * ratio[1] // 100
    return train, val, n - train - val


def stratified_split(class_ids: Mapping[str, Sequence[str]], rare_cutoff: int = 200,
                     rare_ratio=(70, 15, 15), common_ratio=(80, 10, 10),
                     seed: int = 0) -> SplitAssignment:
    """Per-class train/validation/test partition of annotated instances.

    Classes with fewer than ``rare_cutoff`` instances use ``rare_ratio``,
    the rest ``common_ratio``.  Each class is shuffled with its own generator
    seeded from ``(seed, class name)`` after sorting the ids, so the result
    does not depend on input order.
    """
    for ratio in (rare_ratio, common_ratio):
        if len(ratio) != 3 or sum(ratio) != 100 or min(ratio) < 0:
            raise ArchgenError(f"split ratio {tuple(ratio)} must be three non-negative parts summing to 100")
    out = {}
    for name in sorted(class_ids):
        ids = sorted(set(class_ids[name]))
        if len(ids) != len(class_ids[name]):
            raise ArchgenError(f"duplicate instance ids in class {name!r}")
        ratio = rare_ratio if len(ids) < rare_cutoff else common_ratio
        n_train, n_val, _ = split_sizes(len(ids), ratio)
        random.Random(f"{seed}:{name}").shuffle(ids)
        out[name] = ClassSplit(tuple(ids[:n_train]), tuple(ids[n_train:n_train + n_val]),
                               tuple(ids[n_train + n_val:]))
    return SplitAssignment(out)


def instances_by_class(records: Iterable[DetectionRecord]) -> dict[str, list[str]]:
    """Instance ids ``<image_id>/<class>/<k>`` grouped by class, k counting per image."""
    counter = Counter()
    out = defaultdict(list)
    for r in records:
        key = (r.image_id, r.class_name)
        out[r.class_name].append(f"{r.image_id}/{r.class_name}/{counter[key]}")
        counter[key] += 1
    return dict(out)


# -- distance CSV ------------------------------------------------------------

def format_distance_csv(d: DistanceMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["", *d.labels])
    for label, row in zip(d.labels, d.d.tolist()):
        w.writerow([label, *(repr(float(x)) for x in row)])
    return buf.getvalue()


def parse_distance_csv(text: str) -> DistanceMatrix:
    """Square matrix with labels in the header row and first column."""
    rows = [r for r in csv.reader(io.StringIO(text, newline=""))]
    if not rows:
        raise ParseError("empty distance file", line=1)
    labels = rows[0][1:]
    body = [(i, r) for i, r in enumerate(rows[1:], start=2) if r]
    if len(body) != len(labels):
        raise ParseError(f"expected {len(labels)} rows, got {len(body)}")
    values = []
    for (lineno, row), label in zip(body, labels):
        if len(row) != len(labels) + 1 or row[0] != label:
            raise ParseError(f"row must start with {label!r} and have {len(labels)} values", line=lineno)
        try:
            values.append([float(x) for x in row[1:]])
        except ValueError:
            raise ParseError("non-numeric distance", line=lineno) from None
    try:
        return DistanceMatrix(labels, np.array(values).reshape(len(labels), len(labels)))
    except ArchgenError as exc:
        raise ParseError(str(exc)) from None
