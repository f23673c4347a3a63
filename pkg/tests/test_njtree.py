import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from archgen.core import DistanceMatrix
from archgen.errors import ArchgenError, ParseError, SizeError
from archgen.njtree import (PhyloTree, cherries, ls_fit, nj, parse_newick, quote_label,
                            signed_path_lengths, to_newick, tree_distance_matrix)

from helpers import labels, random_tree


def textbook_nj(D):
    """Plain neighbor joining on a list-of-lists matrix; returns leaf path sums."""
    n0 = len(D)
    D = {(i, j): D[i][j] for i in range(n0) for j in range(n0)}
    active = list(range(n0))
    adj = {i: [] for i in range(n0)}
    nxt = n0
    while len(active) > 2:
        r = len(active)
        tot = {i: sum(D[i, k] for k in active) for i in active}
        best = None
        for a in range(r):
            for b in range(a + 1, r):
                i, j = active[a], active[b]
                q = (r - 2) * D[i, j] - tot[i] - tot[j]
                if best is None or q < best[0]:
                    best = (q, i, j)
        _, i, j = best
        li = D[i, j] / 2 + (tot[i] - tot[j]) / (2 * (r - 2))
        lj = D[i, j] - li
        u = nxt
        nxt += 1
        adj[u] = [(i, li), (j, lj)]
        adj[i].append((u, li))
        adj[j].append((u, lj))
        for k in active:
            if k not in (i, j):
                D[u, k] = D[k, u] = (D[i, k] + D[j, k] - D[i, j]) / 2
        D[u, u] = 0.0
        active = [k for k in active if k not in (i, j)] + [u]
    a, b = active
    adj[a].append((b, D[a, b]))
    adj[b].append((a, D[a, b]))
    out = np.zeros((n0, n0))
    for s in range(n0):
        dist, stack = {s: 0.0}, [s]
        while stack:
            x = stack.pop()
            for y, w in adj[x]:
                if y not in dist:
                    dist[y] = dist[x] + w
                    stack.append(y)
        out[s] = [dist[t] for t in range(n0)]
    return out


def close_splits(a: PhyloTree, b: PhyloTree, tol):
    sa, sb = a.splits(), b.splits()
    return sa.keys() == sb.keys() and all(abs(sa[k] - sb[k]) <= tol for k in sa)


class TestNJ:
    def test_two_taxa_midpoint(self):
        t = nj(DistanceMatrix(["A", "B"], [[0, 0.8], [0.8, 0]]))
        assert len(t.edges) == 1
        assert to_newick(t, precision=1) == "(A:0.4,B:0.4);"

    def test_three_point_star(self):
        t = nj(DistanceMatrix(list("ABC"), [[0, 3, 4], [3, 0, 5], [4, 5, 0]]))
        lengths = {t.labels[min(u, v)]: w for u, v, w in t.edges}
        assert lengths == {"A": 1.0, "B": 2.0, "C": 3.0}

    def test_four_taxa_additive(self):
        d = DistanceMatrix(list("ABCD"), [[0, 3, 5, 6], [3, 0, 6, 7], [5, 6, 0, 7], [6, 7, 7, 0]])
        t = nj(d)
        splits = t.splits()
        assert splits[frozenset({2, 3})] == pytest.approx(1.0)
        assert [splits[frozenset({i})] for i in (1, 2, 3)] == pytest.approx([2.0, 3.0, 4.0])
        assert cherries(t) == [("A", "B"), ("C", "D")]
        assert np.allclose(tree_distance_matrix(t).d, d.d)

    def test_textbook_five_taxa(self):
        d = [[0, 5, 9, 9, 8], [5, 0, 10, 10, 9], [9, 10, 0, 8, 7],
             [9, 10, 8, 0, 3], [8, 9, 7, 3, 0]]
        t = nj(DistanceMatrix(list("abcde"), d))
        leaf = {t.labels[min(u, v)]: w for u, v, w in t.edges if min(u, v) < 5}
        assert leaf == pytest.approx({"a": 2, "b": 3, "c": 4, "d": 2, "e": 1})
        assert sorted(w for u, v, w in t.edges if min(u, v) >= 5) == pytest.approx([2, 3])

    def test_errors(self):
        with pytest.raises(SizeError):
            nj(DistanceMatrix(["A"], [[0]]))

    @pytest.mark.parametrize("n", [4, 7, 12, 20])
    def test_additive_recovery(self, n):
        rng = np.random.default_rng(n)
        for _ in range(10):
            t = random_tree(n, rng)
            got = nj(tree_distance_matrix(t))
            assert close_splits(got, t, 1e-9)
            assert len(got.edges) == 2 * n - 3

    @settings(max_examples=40, deadline=None)
    @given(st.integers(3, 14), st.integers(0, 2**31))
    def test_matches_textbook_on_noisy_input(self, n, seed):
        rng = np.random.default_rng(seed)
        x = rng.random((n, n))
        d = x + x.T
        np.fill_diagonal(d, 0)
        t = nj(DistanceMatrix(labels(n), d))
        assert np.allclose(signed_path_lengths(t), textbook_nj(d.tolist()), atol=1e-9)
        assert all(len(t.adjacency[v]) == 3 for v in range(n, t.n_nodes))

    def test_q_ties_go_to_smallest_pair(self):
        d = np.ones((5, 5)) - np.eye(5)
        t = nj(DistanceMatrix(labels(5), d))
        assert ("t0", "t1") in cherries(t)

    def test_clamp_moves_deficit_to_sibling(self):
        d = DistanceMatrix(list("ABCD"), [[0, 6, 5, 3], [6, 0, 1, 1], [5, 1, 0, 9], [3, 1, 9, 0]])
        raw, clamped = nj(d), nj(d, clamp_negative=True)
        assert min(w for *_, w in raw.edges) < 0
        assert min(w for *_, w in clamped.edges) >= 0
        # every cherry keeps its pairwise distance: the deficit moved to the sibling branch
        for x, y in cherries(raw):
            i, j = raw.labels.index(x), raw.labels.index(y)
            assert signed_path_lengths(clamped)[i, j] == pytest.approx(signed_path_lengths(raw)[i, j])


class TestMetrics:
    def test_single_edge(self):
        t = PhyloTree(("A", "B"), ((0, 1, 2.5),))
        assert tree_distance_matrix(t).d[0, 1] == 2.5

    def test_star(self):
        r = [1.0, 2.0, 4.0, 8.0]
        t = PhyloTree(labels(4), tuple((i, 4, r[i]) for i in range(4)))
        d = tree_distance_matrix(t).d
        assert all(d[i, j] == r[i] + r[j] for i in range(4) for j in range(4) if i != j)

    def test_cherries_star_and_caterpillar(self):
        star = PhyloTree(list("abc"), ((0, 3, 1.0), (1, 3, 1.0), (2, 3, 1.0)))
        assert cherries(star) == [("a", "b"), ("a", "c"), ("b", "c")]
        cat = parse_newick("(a:1,(b:1,(c:1,(d:1,e:1):1):1):1);")
        assert cherries(cat) == [("a", "b"), ("d", "e")]

    def test_ls_fit(self):
        d = DistanceMatrix(list("abc"), [[0, 1, 2], [1, 0, 3], [2, 3, 0]])
        assert ls_fit(d, d) == 100.0
        assert ls_fit(d, np.zeros((3, 3))) == 0.0
        with pytest.raises(ArchgenError):
            ls_fit(d, DistanceMatrix(list("xyz"), d.d))

    def test_ls_fit_reorders_labels(self):
        d = DistanceMatrix(list("abc"), [[0, 1, 2], [1, 0, 3], [2, 3, 0]])
        assert ls_fit(d, d.permute([2, 0, 1])) == 100.0

    def test_tree_validation(self):
        with pytest.raises(ArchgenError):
            PhyloTree(("a", "b", "c"), ((0, 1, 1.0), (1, 2, 1.0)))
        with pytest.raises(ArchgenError):
            PhyloTree(("a", "a"), ((0, 1, 1.0),))


class TestNewick:
    def test_quoting(self):
        assert quote_label("new taxon") == "'new taxon'"
        assert quote_label("it's") == "'it''s'"
        assert quote_label("plain") == "plain"

    def test_parse_quoted_labels(self):
        t = parse_newick("('new taxon':1,'it''s':2,c:3);")
        assert t.labels == ("new taxon", "it's", "c")
        assert to_newick(t, precision=0) == "('new taxon':1,'it''s':2,c:3);"

    def test_degree_two_root_suppressed(self):
        t = parse_newick("((a:1,b:2):0.5,(c:3,d:4):1.5);")
        assert t.splits()[frozenset({2, 3})] == pytest.approx(2.0)
        assert len(t.edges) == 5

    @pytest.mark.parametrize("text", ["(a:1,b:2", "(a:1,b:x);", "(a:1,a:2);", "", "(a:1,b:2);junk"])
    def test_parse_errors(self, text):
        with pytest.raises(ParseError):
            parse_newick(text)

    @pytest.mark.parametrize("n", [2, 3, 5, 16, 33])
    def test_round_trip(self, n):
        rng = np.random.default_rng(100 + n)
        for _ in range(20):
            t = random_tree(n, rng)
            text = to_newick(t, precision=9)
            back = parse_newick(text)
            assert to_newick(back, precision=9) == text
            order = [back.labels.index(x) for x in t.labels]
            assert np.allclose(tree_distance_matrix(back).permute(order).d,
                               tree_distance_matrix(t).d, atol=1e-8)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.text(st.characters(blacklist_categories=("Cs", "Cc")), min_size=1, max_size=6),
                    min_size=3, max_size=7, unique=True), st.integers(0, 2**31))
    def test_round_trip_arbitrary_labels(self, names, seed):
        t = random_tree(len(names), np.random.default_rng(seed))
        t = PhyloTree(tuple(names), t.edges)
        text = to_newick(t)
        back = parse_newick(text)
        assert sorted(back.labels) == sorted(t.labels)
        assert to_newick(back) == text
