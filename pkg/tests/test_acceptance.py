"""Acceptance suite: one test per criterion, each reported as a pass/fail line.

Run with ``pytest tests/test_acceptance.py``; the lines appear under the
"acceptance criteria" heading of the terminal summary.
"""
import time

import numpy as np
import pytest

from archgen.cli import main
from archgen.core import DEFAULT_CATALOG, DistanceMatrix, TraitMatrix
from archgen.ingest import format_trait_csv, parse_trait_csv, parse_type_catalog, stratified_split
from archgen.neighbornet import circular_splits, delta_score, neighbor_net, split_metric
from archgen.njtree import ls_fit, nj, parse_newick, to_newick, tree_distance_matrix
from archgen.seriation import brute_force_seriate, petrie_criterion, seriate
from archgen.simulate import SimConfig, diagnose, simulate
from archgen.splitsgraph import build_splits_graph, format_splits, parse_splits, verify_graph_metric

from helpers import box_metric, circular_corpus, labels, planted_buildings, tree_corpus

SIZES = (4, 8, 16, 32)


@pytest.fixture(scope="module")
def trees():
    return tree_corpus(SIZES, 100, seed=2024, lo=0.1, hi=2.0)


@pytest.fixture(scope="module")
def circulars():
    return circular_corpus(50, seed=77, n_range=(4, 15))


@pytest.fixture(scope="module")
def systems(trees, circulars):
    """Every split system of criteria 2-4."""
    out = [neighbor_net(tree_distance_matrix(t)) for t in trees if t.n_leaves <= 16]
    out += [neighbor_net(split_metric(s)) for s in circulars]
    out.append(neighbor_net(box_metric()))
    return out


def random_metric(n, seed):
    x = np.random.default_rng(seed).random((n, n))
    d = x + x.T
    np.fill_diagonal(d, 0)
    return DistanceMatrix(labels(n), d)


def test_criterion_01_nj_additive_recovery(trees, record):
    bad_topology, worst = 0, 0.0
    t0 = time.perf_counter()
    fits = [nj(tree_distance_matrix(t)) for t in trees]
    elapsed = time.perf_counter() - t0
    for t, got in zip(trees, fits):
        want, have = t.splits(), got.splits()
        if want.keys() != have.keys():
            bad_topology += 1
            continue
        worst = max(worst, max(abs(want[k] - have[k]) for k in want))
    ok = bad_topology == 0 and worst <= 1e-9 and elapsed < 5.0
    record(1, ok, f"{len(trees)} trees, topology errors {bad_topology}, "
                  f"max length error {worst:.1e}, {elapsed:.2f}s")
    assert ok


def test_criterion_02_neighbor_net_tree_recovery(trees, record):
    wrong = 0
    worst_w = 0.0
    worst_fit = 100.0
    count = 0
    for t in trees:
        if t.n_leaves > 16:
            continue
        count += 1
        d = tree_distance_matrix(t)
        s = neighbor_net(d, weight_threshold=1e-6)
        got = {sp.side: sp.weight for sp in s.splits}
        want = t.splits()
        if got.keys() != want.keys():
            wrong += 1
            continue
        worst_w = max(worst_w, max(abs(got[k] - want[k]) for k in want))
        worst_fit = min(worst_fit, ls_fit(d, split_metric(s)))
    ok = wrong == 0 and worst_w <= 1e-6 and worst_fit >= 99.9999
    record(2, ok, f"{count} trees, split-set errors {wrong}, max weight error {worst_w:.1e}, "
                  f"min ls_fit {worst_fit:.6f}%")
    assert ok


def test_criterion_03_neighbor_net_circular_recovery(circulars, record):
    worst_gen = worst_other = 0.0
    missing = 0
    for s in circulars:
        fit = neighbor_net(split_metric(s), weight_threshold=0.0)
        got = {sp.side: sp.weight for sp in fit.splits}
        want = {sp.side: sp.weight for sp in s.splits}
        all_sides = set(circular_splits(fit.ordering))
        if not set(want) <= all_sides:
            missing += 1
            continue
        worst_gen = max([worst_gen] + [abs(got.get(k, 0.0) - w) for k, w in want.items()])
        worst_other = max([worst_other] + [w for k, w in got.items() if k not in want])
    ok = missing == 0 and worst_gen <= 1e-6 and worst_other < 1e-6
    record(3, ok, f"{len(circulars)} systems, non-arc generators {missing}, "
                  f"max weight error {worst_gen:.1e}, max spurious weight {worst_other:.1e}")
    assert ok


def test_criterion_04_box_metric(record):
    d = box_metric()
    s = neighbor_net(d)
    g = build_splits_graph(s)
    two = len(s.splits) == 2 and bool(np.all(np.abs(s.weights - 1.0) <= 1e-9))
    delta = delta_score(d)
    cycle4 = g.loop_count() == 1 and g.n_nodes == 4 and len(g.edges) == 4
    ok = two and abs(delta - 1.0) <= 1e-12 and cycle4
    record(4, ok, f"splits {[round(float(w), 12) for w in s.weights]}, delta {delta!r}, "
                  f"graph {g.n_nodes} nodes / {len(g.edges)} edges / {g.loop_count()} loop")
    assert ok


def petrie_matrix(n, k, rng):
    x = np.zeros((n, k), dtype=int)
    for j in range(k):
        a = int(rng.integers(n))
        b = int(rng.integers(a, n))
        x[a:b + 1, j] = 1
    return x


def tm(bits):
    bits = np.asarray(bits)
    return TraitMatrix([f"c{j}" for j in range(bits.shape[1])],
                       [f"r{i}" for i in range(bits.shape[0])], bits)


def test_criterion_05_seriation(record):
    equal = below = 0
    for seed in range(100):
        m = tm(np.random.default_rng(10_000 + seed).integers(0, 2, (8, 10)))
        got, best = seriate(m, seed=seed).criterion, brute_force_seriate(m).criterion
        equal += got == best
        below += got < best
    recovered = 0
    for seed in range(50):
        rng = np.random.default_rng(20_000 + seed)
        x = petrie_matrix(20, 14, rng)
        m = tm(x[rng.permutation(20)])
        r = seriate(m, seed=seed)
        recovered += r.criterion == 0 and petrie_criterion(m, r.order) == 0
    t0 = time.perf_counter()
    brute_force_seriate(tm(np.random.default_rng(5).integers(0, 2, (8, 10))))
    bf_time = time.perf_counter() - t0
    ok = equal >= 95 and below == 0 and recovered == 50 and bf_time < 10.0
    record(5, ok, f"brute-force ties {equal}/100, below oracle {below}, "
                  f"Petrie n=20 recovered {recovered}/50, brute force n=8 {bf_time:.2f}s")
    assert ok


def test_criterion_06_graph_metric(systems, record):
    worst = max(verify_graph_metric(build_splits_graph(s), s) for s in systems)
    ok = worst <= 1e-9
    record(6, ok, f"{len(systems)} systems, max |graph - split metric| {worst:.1e}")
    assert ok


def test_criterion_07_pipeline_shape(tmp_path, record):
    m, planted = planted_buildings(seed=7)
    src = tmp_path / "buildings.csv"
    src.write_text(format_trait_csv(m))
    out = tmp_path / "out"
    code = main(["types", "--input", str(src), "--threshold", "8", "--out-dir", str(out)])
    zero_rows = {t for t, row in zip(m.taxa, m.bits) if not row.any()}
    variants = set((out / "variants.txt").read_text().split())
    kept, _ = parse_type_catalog((out / "types.csv").read_text())
    kept_vectors = {str(e.vector) for e in kept.entries}
    summary = dict(line.split("=") for line in (out / "summary.txt").read_text().split())
    identity = int(summary["typed_buildings"]) + int(summary["leftovers"]) + int(summary["variants"])
    ok = (code == 0 and variants == zero_rows and len(zero_rows) == 19
          and kept_vectors == set(planted) and identity == 1277 == int(summary["buildings"]))
    record(7, ok, f"buildings {summary['buildings']}, variants {len(variants)}, types {summary['types']} "
                  f"(planted {len(planted)}), typed+leftovers+variants = {identity}")
    assert ok


def test_criterion_08_stratified_split(record):
    sizes = {}
    deterministic = True
    for n in (120, 1000):
        ids = {"c": [f"i{k}" for k in range(n)]}
        a, b = stratified_split(ids, seed=3), stratified_split(ids, seed=3)
        deterministic &= list(a.rows()) == list(b.rows())
        sizes[n] = a["c"].sizes
    ok = sizes == {120: (84, 18, 18), 1000: (800, 100, 100)} and deterministic
    record(8, ok, f"n=120 -> {sizes[120]}, n=1000 -> {sizes[1000]}, seeded rerun identical {deterministic}")
    assert ok


def test_criterion_09_model_selection(record):
    t0 = time.perf_counter()
    tree_d, tree_fit, net_d, net_fit = [], [], [], []
    for seed in range(30):
        a = diagnose(simulate(SimConfig("tree", 25, 14, 0.05, 0.0, seed)).matrix, seed=seed)
        b = diagnose(simulate(SimConfig("network", 25, 14, 0.05, 0.3, seed)).matrix, seed=seed)
        tree_d.append(a.delta)
        tree_fit.append(a.tree_fit)
        net_d.append(b.delta)
        net_fit.append(b.tree_fit)
    elapsed = time.perf_counter() - t0
    gap = float(np.mean(net_d) - np.mean(tree_d))
    ok = gap >= 0.05 and np.mean(tree_fit) > np.mean(net_fit) and elapsed < 60.0
    record(9, ok, f"delta tree {np.mean(tree_d):.4f}, network {np.mean(net_d):.4f} (gap {gap:+.4f}, "
                  f"need >= 0.05); tree_fit tree {np.mean(tree_fit):.2f} vs network "
                  f"{np.mean(net_fit):.2f}; {elapsed:.1f}s")
    assert ok


def test_criterion_10_performance(record):
    times = {}
    for n in (25, 200):
        d = random_metric(n, seed=n)
        t0 = time.perf_counter()
        neighbor_net(d)
        times[f"neighbor_net n={n}"] = time.perf_counter() - t0
    d = random_metric(500, seed=500)
    t0 = time.perf_counter()
    nj(d)
    times["nj n=500"] = time.perf_counter() - t0
    limits = {"neighbor_net n=25": 1.0, "neighbor_net n=200": 30.0, "nj n=500": 5.0}
    ok = all(times[k] < limits[k] for k in limits)
    record(10, ok, ", ".join(f"{k} {v:.2f}s (< {limits[k]:g}s)" for k, v in times.items()))
    assert ok


def test_criterion_11_round_trips(trees, systems, record):
    failures = []
    mats = [planted_buildings(seed=s)[0] for s in range(3)]
    mats += [simulate(SimConfig(mode, 25, 14, 0.05, 0.3 if mode == "network" else 0.0, s)).matrix
             for mode in ("line", "tree", "network") for s in range(5)]
    for m in mats:
        text = format_trait_csv(m)
        if format_trait_csv(parse_trait_csv(text, DEFAULT_CATALOG)) != text:
            failures.append("trait csv")
    for t in trees:
        text = to_newick(t)
        if to_newick(parse_newick(text)) != text:
            failures.append("newick")
    for s in systems:
        text = format_splits(s)
        if format_splits(parse_splits(text)) != text:
            failures.append("splits")
    ok = not failures
    record(11, ok, f"trait csv {len(mats)}, newick {len(trees)}, splits {len(systems)} files; "
                   f"failures {len(failures)}")
    assert ok
