"""Command-line pipeline: ``archgen <command> [options]``.

Every command writes its outputs and a ``manifest.json`` under
``--out-dir``.  Failures print one ``error:<category>:<message>`` line to
stderr and exit 1; usage errors exit 2.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import DEFAULT_CATALOG, DEFAULT_METRIC, METRICS, distance_matrix, phi_correlation, trait_frequencies
from .errors import ArchgenError
from .ingest import (DEFAULT_TAU, DEFAULT_TYPE_THRESHOLD, buildings_from_detections,
                     buildings_from_matrix, buildings_to_matrix, derive_types,
                     format_trait_csv, format_type_catalog,
                     instances_by_class, parse_distance_csv, parse_trait_csv,
                     read_detections, stratified_split)
from .neighbornet import DEFAULT_NNLS_TOL, DEFAULT_WEIGHT_THRESHOLD, delta_score, neighbor_net, split_metric
from .njtree import cherries, ls_fit, nj, signed_path_lengths, to_newick
from .seriation import DEFAULT_RESTARTS, brute_force_seriate, seriate, segment_order
from .simulate import MODES, SimConfig, diagnose, simulate
from .splitsgraph import (build_splits_graph, cluster_styles, equal_angle_layout, format_dot,
                          format_splits, format_splits_csv, format_svg, parse_splits,
                          splits_to_tree, verify_graph_metric)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class Run:
    """Collects inputs and outputs for one command invocation."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out_dir)
        self.inputs: list[str] = []
        self.files: dict[str, str] = {}

    def read(self, path) -> str:
        self.inputs.append(str(path))
        return Path(path).read_text(encoding="utf-8")

    def write(self, name: str, text: str):
        self.files[name] = text

    def commit(self):
        self.out.mkdir(parents=True, exist_ok=True)
        for name, text in self.files.items():
            (self.out / name).write_text(text, encoding="utf-8", newline="")
        (self.out / "manifest.json").write_text(manifest_json(self.args, self.inputs),
                                                 encoding="utf-8", newline="")


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def manifest_json(args, inputs) -> str:
    params = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command", "out_dir")}
    manifest = {
        "command": args.command,
        "inputs": [{"path": p, "sha256": sha256_file(p)} for p in inputs],
        "params": params,
        "version": __version__,
    }
    return json.dumps(manifest, indent=2, sort_keys=True) + "\n"


def _csv_cell(value) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="").writerow([value])
    return buf.getvalue()


def _kv(pairs) -> str:
    return "".join(f"{k}={v}\n" for k, v in pairs)


def _load_traits(run: Run):
    return parse_trait_csv(run.read(run.args.input))


def _load_distances(run: Run):
    a = run.args
    if getattr(a, "distances", None):
        return parse_distance_csv(run.read(a.distances))
    return distance_matrix(_load_traits(run), a.metric)


# -- commands ----------------------------------------------------------------

def cmd_ingest(run: Run):
    a = run.args
    run.inputs.append(a.detections)
    buildings = buildings_from_detections(read_detections(a.detections), tau=a.tau)
    if not buildings:
        raise ArchgenError("no buildings in detections")
    m = buildings_to_matrix(buildings, DEFAULT_CATALOG)
    run.write("buildings.csv", format_trait_csv(m))
    run.write("variants.txt", "".join(b.building_id + "\n" for b in buildings if b.variant_flag))


def cmd_stats(run: Run):
    m = _load_traits(run)
    phi = phi_correlation(m)
    report = {
        "n_taxa": m.n_taxa,
        "n_traits": m.n_traits,
        "frequencies": [{"trait": f.trait, "count": f.count, "percentage": f.percentage}
                        for f in trait_frequencies(m)],
        "phi": {"traits": list(phi.traits), "matrix": np.round(phi.phi, 12).tolist(),
                "constant": list(phi.constant)},
    }
    run.write("stats.json", json.dumps(report, indent=2) + "\n")


def cmd_types(run: Run):
    m = _load_traits(run)
    buildings = buildings_from_matrix(m)
    types, leftovers = derive_types(buildings, run.args.threshold)
    variants = [b.building_id for b in buildings if b.variant_flag]
    run.write("types.csv", format_type_catalog(types, m.catalog))
    if len(types):
        run.write("type_matrix.csv", format_trait_csv(types.to_matrix(m.catalog)))
    run.write("leftovers.txt", "".join(x + "\n" for x in leftovers))
    run.write("variants.txt", "".join(x + "\n" for x in variants))
    run.write("summary.txt", _kv([
        ("buildings", m.n_taxa), ("variants", len(variants)), ("types", len(types)),
        ("typed_buildings", sum(e.count for e in types.entries)), ("leftovers", len(leftovers)),
        ("threshold", run.args.threshold)]))


def cmd_split_dataset(run: Run):
    a = run.args
    if a.detections:
        run.inputs.append(a.detections)
        classes = instances_by_class(read_detections(a.detections))
    else:
        rows = list(csv.reader(io.StringIO(run.read(a.instances), newline="")))
        if not rows or rows[0] != ["class", "instance_id"]:
            raise ArchgenError("instances file needs a 'class,instance_id' header")
        classes = {}
        for row in rows[1:]:
            if row:
                classes.setdefault(row[0], []).append(row[1])
    split = stratified_split(classes, rare_cutoff=a.rare_cutoff, seed=a.seed)
    run.write("split.csv", "class,instance_id,subset\n" + "".join(
        f"{_csv_cell(c)},{_csv_cell(i)},{s}\n" for c, i, s in split.rows()))
    run.write("sizes.csv", "class,n,train,validation,test\n" + "".join(
        f"{_csv_cell(c)},{sum(cs.sizes)},{cs.sizes[0]},{cs.sizes[1]},{cs.sizes[2]}\n"
        for c, cs in sorted(split.classes.items())))


def seriation_svg(m, order, cell: int = 14) -> str:
    label_w = 8 * max(len(t) for t in m.taxa) + 10
    head_h = 8 * max(len(n) for n in m.catalog.names) + 10
    w = label_w + cell * m.n_traits + 10
    h = head_h + cell * m.n_taxa + 10
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
           f'<rect width="{w}" height="{h}" fill="white"/>']
    for j, name in enumerate(m.catalog.names):
        x = label_w + cell * j + cell / 2
        out.append(f'<text transform="translate({x:.1f},{head_h - 4}) rotate(-90)" '
                   f'font-size="11" font-family="sans-serif">{_xml(name)}</text>')
    for r, i in enumerate(order):
        y = head_h + cell * r
        out.append(f'<text x="{label_w - 4}" y="{y + cell - 3}" font-size="11" '
                   f'font-family="sans-serif" text-anchor="end">{_xml(m.taxa[i])}</text>')
        for j in range(m.n_traits):
            fill = "#222" if m.bits[i, j] else "#eee"
            out.append(f'<rect x="{label_w + cell * j}" y="{y}" width="{cell - 1}" '
                       f'height="{cell - 1}" fill="{fill}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _xml(s):
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def cmd_seriate(run: Run):
    a = run.args
    m = _load_traits(run)
    if a.brute_force:
        res = brute_force_seriate(m)
    else:
        res = seriate(m, restarts=a.restarts, seed=a.seed)
    run.write("order.csv", "position,taxon,criterion\n" + "".join(
        f"{pos},{_csv_cell(t)},{res.criterion}\n" for pos, t in enumerate(res.taxa(m), start=1)))
    run.write("seriation.txt", _kv([("method", res.method), ("criterion", res.criterion)]))
    run.write("seriated.csv", format_trait_csv(m.take(res.order)))
    run.write("seriation.svg", seriation_svg(m, res.order))
    if a.groups > 1:
        groups = segment_order(res, distance_matrix(m, a.metric), a.groups)
        run.write("groups.csv", "taxon,group\n" + "".join(
            f"{_csv_cell(t)},{g}\n" for g, members in enumerate(groups, start=1) for t in members))


def cmd_nj(run: Run):
    d = _load_distances(run)
    tree = nj(d, clamp_negative=run.args.clamp)
    run.write("tree.nwk", to_newick(tree, precision=run.args.precision) + "\n")
    run.write("cherries.csv", "taxon_a,taxon_b\n" + "".join(
        f"{_csv_cell(x)},{_csv_cell(y)}\n" for x, y in cherries(tree)))
    run.write("fit.txt", _kv([("ls_fit", repr(ls_fit(d, signed_path_lengths(tree))))]))


def cmd_nnet(run: Run):
    a = run.args
    d = _load_distances(run)
    s = neighbor_net(d, weight_threshold=a.threshold, tol=a.tol)
    run.write("splits.txt", format_splits(s))
    run.write("splits.csv", format_splits_csv(s))
    report = [("n_splits", len(s.splits)), ("compatible", str(s.is_compatible()).lower()),
              ("ls_fit", repr(ls_fit(d, split_metric(s)))),
              ("cycle", " ".join(s.labels[i] for i in s.ordering.cycle))]
    if d.n >= 4:
        report.insert(0, ("delta", repr(delta_score(d, seed=a.seed))))
    run.write("report.txt", _kv(report))


def cmd_graph(run: Run):
    a = run.args
    s = parse_splits(run.read(a.splits))
    g = build_splits_graph(s)
    coords = equal_angle_layout(g, s)
    clusters = cluster_styles(split_metric(s), a.clusters) if a.clusters else None
    run.write("graph.dot", format_dot(g, coords))
    run.write("graph.svg", format_svg(g, coords, clusters))
    if s.is_compatible():
        run.write("tree.nwk", to_newick(splits_to_tree(s)) + "\n")
    run.write("report.txt", _kv([("nodes", g.n_nodes), ("edges", len(g.edges)),
                                 ("loops", g.loop_count()),
                                 ("metric_error", repr(verify_graph_metric(g, s)))]))


def cmd_cluster(run: Run):
    a = run.args
    if a.splits:
        d = split_metric(parse_splits(run.read(a.splits)))
    else:
        d = _load_distances(run)
    c = cluster_styles(d, a.k)
    run.write("clusters.csv", "taxon,cluster\n" + "".join(f"{_csv_cell(t)},{c.assignment[t]}\n" for t in d.labels))
    run.write("report.txt", _kv([("method", c.method), ("k", c.k)]))


def cmd_simulate(run: Run):
    a = run.args
    cfg = SimConfig(a.mode, a.n_taxa, a.n_traits, a.flip_rate, a.borrow_rate, a.seed)
    res = simulate(cfg)
    run.write("traits.csv", format_trait_csv(res.matrix))
    run.write("truth.txt", "".join(x + "\n" for x in res.truth_lines()))
    run.write("history.txt", "root " + "".join(map(str, res.root)) + "\n"
              + "".join(f"{e}\n" for e in res.history))
    run.write("diagnosis.txt", diagnose(res.matrix, seed=a.seed, metric=a.metric).as_text())


def cmd_diagnose(run: Run):
    m = _load_traits(run)
    run.write("diagnosis.txt", diagnose(m, seed=run.args.seed, metric=run.args.metric).as_text())


# -- parser ------------------------------------------------------------------

def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("common options")
    g.add_argument("--seed", type=int, default=0, help="random seed")
    g.add_argument("--out-dir", default="out", help="directory for all outputs")
    g.add_argument("--metric", choices=METRICS, default=DEFAULT_METRIC, help="trait distance metric")
    g.add_argument("--config", default=None, help="key=value file of defaults; flags override it")
    return p


def _distance_inputs(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--input", help="trait CSV (building_id,<traits>)")
    g.add_argument("--distances", help="distance matrix CSV")
    return g


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="archgen", description="Genealogies of binary trait data.",
                     formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _common()

    def add(name, func, help):
        p = sub.add_parser(name, parents=[common], help=help, description=help, formatter_class=fmt)
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "encode detector output as one trait vector per building")
    p.add_argument("--detections", required=True, help="NDJSON detection records")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU, help="confidence threshold")

    p = add("stats", cmd_stats, "trait frequencies and phi correlations")
    p.add_argument("--input", required=True, help="trait CSV")

    p = add("types", cmd_types, "derive types from duplicate trait vectors")
    p.add_argument("--input", required=True, help="trait CSV of buildings")
    p.add_argument("--threshold", type=int, default=DEFAULT_TYPE_THRESHOLD,
                   help="minimum duplicate count for a type")

    p = add("split-dataset", cmd_split_dataset, "stratified train/validation/test split")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--detections", help="NDJSON detection records")
    g.add_argument("--instances", help="CSV with class,instance_id columns")
    p.add_argument("--rare-cutoff", type=int, default=200,
                   help="classes below this count use the 70/15/15 ratio")

    p = add("seriate", cmd_seriate, "order taxa to minimise embedded absences")
    p.add_argument("--input", required=True, help="trait CSV")
    p.add_argument("--restarts", type=int, default=DEFAULT_RESTARTS, help="local search runs")
    p.add_argument("--brute-force", action="store_true", help="exhaustive search (at most 10 taxa)")
    p.add_argument("--groups", type=int, default=1, help="cut the order into this many groups")

    p = add("nj", cmd_nj, "neighbor-joining tree")
    _distance_inputs(p)
    p.add_argument("--clamp", action="store_true", help="clamp negative branch lengths to 0")
    p.add_argument("--precision", type=int, default=6, help="decimal places in Newick lengths")

    p = add("nnet", cmd_nnet, "neighbor-net circular split system")
    _distance_inputs(p)
    p.add_argument("--threshold", type=float, default=DEFAULT_WEIGHT_THRESHOLD,
                   help="drop splits with weight at or below this")
    p.add_argument("--tol", type=float, default=DEFAULT_NNLS_TOL, help="NNLS optimality tolerance")

    p = add("graph", cmd_graph, "splits graph with DOT, SVG and Newick exports")
    p.add_argument("--splits", required=True, help="splits interchange file")
    p.add_argument("--clusters", type=int, default=0, help="colour taxa by this many clusters (0: off)")

    p = add("cluster", cmd_cluster, "average-linkage style clusters")
    g = _distance_inputs(p)
    g.add_argument("--splits", help="splits interchange file (clusters its split metric)")
    p.add_argument("--k", type=int, default=4, help="number of clusters")

    p = add("simulate", cmd_simulate, "synthetic corpus with known history")
    p.add_argument("--mode", choices=MODES, default="tree", help="transmission model")
    p.add_argument("--n-taxa", type=int, default=25, help="sampled taxa")
    p.add_argument("--n-traits", type=int, default=14, help="binary traits")
    p.add_argument("--flip-rate", type=float, default=0.05, help="per-trait flip probability")
    p.add_argument("--borrow-rate", type=float, default=0.0, help="per-lineage borrow probability")

    p = add("diagnose", cmd_diagnose, "delta score, tree fit and seriation criterion")
    p.add_argument("--input", required=True, help="trait CSV")
    return parser


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def read_config(path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}: line {lineno}: expected key=value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _config_path(argv):
    for k, tok in enumerate(argv):
        if tok == "--config" and k + 1 < len(argv):
            return argv[k + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(sub: argparse.ArgumentParser, command: str, config: dict[str, str]):
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in config.items():
        if key not in actions or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r} for {command}")
        act = actions[key]
        if isinstance(act, argparse._StoreTrueAction):
            defaults[key] = _bool(value)
        elif act.type is not None:
            try:
                defaults[key] = act.type(value)
            except ValueError:
                raise UsageError(f"config key {key!r}: invalid value {value!r}") from None
        else:
            defaults[key] = value
        if act.choices is not None and defaults[key] not in act.choices:
            raise UsageError(f"config key {key!r}: {value!r} not in {list(act.choices)}")
        act.required = False
    for group in sub._mutually_exclusive_groups:
        if any(a.dest in defaults for a in group._group_actions):
            group.required = False
    sub.set_defaults(**defaults)


def parse_args(argv):
    """Parse ``argv``; a ``--config`` file supplies defaults that flags override."""
    parser = build_parser()
    path = _config_path(argv)
    if path is not None and argv and not argv[0].startswith("-"):
        subs = parser._subparsers._group_actions[0].choices
        if argv[0] in subs:
            try:
                config = read_config(path)
            except OSError as exc:
                raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
            _apply_config(subs[argv[0]], argv[0], config)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"error:usage:{exc}", file=sys.stderr)
        return 2
    run = Run(args)
    try:
        args.func(run)
        if run.args.config:
            run.inputs.append(run.args.config)
        run.commit()
    except ArchgenError as exc:
        print(f"error:{exc.category}:{exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error:io:{exc.strerror or exc}: {exc.filename or ''}".rstrip(": "), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
