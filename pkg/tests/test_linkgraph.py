import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wikiflu import linkgraph
from wikiflu.linkgraph import LinkGraph, cyclerank, ppagerank, shortest_path_distance, top_n

import oracles


def write_edges(tmp_path, lines):
    p = tmp_path / "g.tsv"
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return p


class TestLoad:
    def test_three_edges(self, tmp_path):
        g, stats = linkgraph.load_edge_list(write_edges(tmp_path, ["A\tB", "B\tA", "A\tC"]))
        assert (g.n_nodes, g.n_edges) == (3, 3)
        assert stats.self_loops == stats.duplicates == 0

    def test_self_loop_dropped(self, tmp_path):
        g, stats = linkgraph.load_edge_list(write_edges(tmp_path, ["A\tA", "A\tB"]))
        assert stats.self_loops == 1
        assert g.edges() == [("A", "B")]

    def test_duplicate_dropped(self, tmp_path):
        g, stats = linkgraph.load_edge_list(write_edges(tmp_path, ["A\tB", "A\tB"]))
        assert g.n_edges == 1
        assert stats.duplicates == 1

    def test_comments_and_underscores(self, tmp_path):
        g, _ = linkgraph.load_edge_list(write_edges(tmp_path, ["# header", "", "Influenza A\tFever"]))
        assert "Influenza_A" in g.index
        assert "Influenza A" in g

    def test_strict_rejects_malformed(self, tmp_path):
        p = write_edges(tmp_path, ["A\tB", "just-one-field"])
        with pytest.raises(linkgraph.GraphFormatError) as exc:
            linkgraph.load_edge_list(p)
        assert exc.value.lineno == 2

    def test_lenient_counts_malformed(self, tmp_path):
        p = write_edges(tmp_path, ["A\tB", "x", "B\tC\tD"])
        g, stats = linkgraph.load_edge_list(p, strict=False)
        assert stats.malformed == 2 and stats.malformed_lines == [2, 3]
        assert g.n_edges == 1

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            linkgraph.load_edge_list(tmp_path / "nope.tsv")


class TestCycleRank:
    def test_two_two_cycles(self):
        g = LinkGraph.from_edges([("A", "B"), ("B", "A"), ("A", "C"), ("C", "A")])
        r = cyclerank(g, "A", K=3)
        assert r.scores == {"A": 1.0, "B": 0.5, "C": 0.5}

    def test_no_cycle(self):
        g = LinkGraph.from_edges([("A", "B")])
        r = cyclerank(g, "A")
        assert r.score("A") == 0.0 and r.score("B") == 0.0

    def test_exp_sigma(self):
        g = LinkGraph.from_edges([("A", "B"), ("B", "C"), ("C", "A")])
        r = cyclerank(g, "A", K=3, sigma="exp")
        assert r.score("B") == pytest.approx(math.exp(-3), abs=1e-15)

    def test_k_limits_length(self):
        g = LinkGraph.from_edges([("A", "B"), ("B", "C"), ("C", "A")])
        assert cyclerank(g, "A", K=2).scores == {}
        assert cyclerank(g, "A", K=3).score("C") == pytest.approx(1 / 3)

    @pytest.mark.parametrize("bad", [1, 0, -3])
    def test_k_below_two(self, bad):
        g = LinkGraph.from_edges([("A", "B")])
        with pytest.raises(ValueError):
            cyclerank(g, "A", K=bad)

    def test_k_cap(self):
        g = LinkGraph.from_edges([("A", "B")])
        with pytest.raises(ValueError, match="cap"):
            cyclerank(g, "A", K=9, max_k=8)

    def test_unknown_ref(self):
        with pytest.raises(KeyError):
            cyclerank(LinkGraph.from_edges([("A", "B")]), "Z")

    @pytest.mark.parametrize("seed", range(25))
    def test_random_10_nodes_vs_oracle(self, seed):
        rng = np.random.default_rng(seed)
        titles, edges = oracles.random_digraph(rng, 10, rng.uniform(0.1, 0.5))
        g = LinkGraph(titles, [(int(a[1:]), int(b[1:])) for a, b in edges])
        K = int(rng.integers(2, 5))
        ref = titles[int(rng.integers(10))]
        got = cyclerank(g, ref, K=K)
        want = oracles.cyclerank_oracle(titles, edges, ref, K)
        for t in titles:
            assert abs(got.score(t) - want.get(t, 0.0)) <= 1e-12

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_networkx_enumeration(self, seed):
        rng = np.random.default_rng(100 + seed)
        titles, edges = oracles.random_digraph(rng, 9, 0.35)
        G = nx.DiGraph(edges)
        G.add_nodes_from(titles)
        K = 6
        want = {}
        for cyc in nx.simple_cycles(G, length_bound=K):
            if "N0" in cyc and len(cyc) >= 2:
                for t in cyc:
                    want[t] = want.get(t, 0.0) + 1.0 / len(cyc)
        g = LinkGraph(titles, [(int(a[1:]), int(b[1:])) for a, b in edges])
        got = cyclerank(g, "N0", K=K)
        for t in titles:
            assert got.score(t) == pytest.approx(want.get(t, 0.0), abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000), st.integers(3, 9), st.floats(0.1, 0.6), st.integers(2, 4))
    def test_properties(self, seed, n, density, K):
        rng = np.random.default_rng(seed)
        titles, edges = oracles.random_digraph(rng, n, density)
        g = LinkGraph(titles, [(int(a[1:]), int(b[1:])) for a, b in edges])
        r = cyclerank(g, "N0", K=K)
        assert all(s >= 0 for s in r.scores.values())
        if r.scores:
            assert r.score("N0") == max(r.scores.values())
        # each cycle hands out l * (1/l) = 1
        assert sum(r.scores.values()) == pytest.approx(r.parameters["cycles"], abs=1e-9)
        again = cyclerank(g, "N0", K=K)
        assert again.scores == r.scores


class TestPPageRank:
    def test_single_node(self):
        g = LinkGraph(["A"], [])
        assert ppagerank(g, ["A"]).scores == {"A": 1.0}

    def test_damping_to_zero(self):
        g = LinkGraph.from_edges([("A", "B"), ("B", "C"), ("C", "A"), ("C", "D")])
        r = ppagerank(g, ["A", "C"], damping=1e-12)
        assert r.score("A") == pytest.approx(0.5, abs=1e-9)
        assert r.score("C") == pytest.approx(0.5, abs=1e-9)
        assert r.score("B") == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.parametrize("seed", range(20))
    def test_eight_nodes_vs_dense_solve(self, seed):
        rng = np.random.default_rng(seed)
        titles, edges = oracles.random_digraph(rng, 8, rng.uniform(0.1, 0.5))
        g = LinkGraph(titles, [(int(a[1:]), int(b[1:])) for a, b in edges])
        sources = sorted(rng.choice(titles, size=int(rng.integers(1, 3)), replace=False).tolist())
        got = ppagerank(g, sources)
        want = oracles.ppagerank_oracle(titles, edges, sources, 0.85)
        for t in titles:
            assert abs(got.score(t) - want[t]) <= 1e-8
        assert abs(sum(got.scores.values()) - 1.0) <= 1e-9

    def test_residuals_non_increasing(self):
        rng = np.random.default_rng(3)
        titles, edges = oracles.random_digraph(rng, 30, 0.15)
        g = LinkGraph(titles, [(int(a[1:]), int(b[1:])) for a, b in edges])
        res = ppagerank(g, ["N0"]).parameters["residuals"]
        assert all(b <= a * (1 + 1e-9) + 1e-15 for a, b in zip(res, res[1:]))

    def test_empty_sources(self):
        with pytest.raises(ValueError):
            ppagerank(LinkGraph(["A"], []), [])

    def test_non_convergence_reports_residual(self):
        g = LinkGraph.from_edges([("A", "B"), ("B", "A")])
        with pytest.raises(linkgraph.ConvergenceError) as exc:
            ppagerank(g, ["A"], tol=1e-15, max_iter=2)
        assert exc.value.residual > 0

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        titles, edges = oracles.random_digraph(rng, 12, 0.3)
        g = LinkGraph(titles, [(int(a[1:]), int(b[1:])) for a, b in edges])
        assert ppagerank(g, ["N1"]).scores == ppagerank(g, ["N1"]).scores


class TestShortestPath:
    def test_identity(self):
        assert shortest_path_distance(LinkGraph.from_edges([("A", "B")]), "A", "A") == 0

    def test_two_hops(self):
        assert shortest_path_distance(LinkGraph.from_edges([("A", "B"), ("B", "C")]), "A", "C") == 2

    def test_unreachable(self):
        g = LinkGraph.from_edges([("A", "B")])
        assert shortest_path_distance(g, "B", "A") is None
        assert linkgraph.distance_class(None) == ">3"

    @pytest.mark.parametrize("d,label", [(0, "0"), (3, "3"), (4, ">3"), (17, ">3")])
    def test_classes(self, d, label):
        assert linkgraph.distance_class(d) == label

    def test_unknown_title(self):
        with pytest.raises(KeyError):
            shortest_path_distance(LinkGraph.from_edges([("A", "B")]), "A", "Q")

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_triangle_inequality_and_networkx(self, seed):
        rng = np.random.default_rng(seed)
        titles, edges = oracles.random_digraph(rng, 7, 0.25)
        g = LinkGraph(titles, [(int(a[1:]), int(b[1:])) for a, b in edges])
        G = nx.DiGraph(edges)
        G.add_nodes_from(titles)
        ref = dict(nx.all_pairs_shortest_path_length(G))
        d = {(a, b): shortest_path_distance(g, a, b) for a in titles for b in titles}
        for (a, b), v in d.items():
            assert v == ref[a].get(b)
        for a in titles:
            for b in titles:
                for c in titles:
                    if d[a, b] is not None and d[b, c] is not None:
                        assert d[a, c] <= d[a, b] + d[b, c]


class TestTopN:
    def result(self, scores):
        return linkgraph.RankingResult("cyclerank", ("A",), scores, {})

    def test_order_and_tie_break(self):
        assert top_n(self.result({"B": 0.5, "C": 0.5, "A": 1.0}), 2, {"A"}) == ["B", "C"]

    def test_truncation(self):
        assert top_n(self.result({"B": 0.5, "C": 0.0, "A": 1.0}), 10) == ["A", "B"]

    def test_exclude_all(self):
        assert top_n(self.result({"B": 0.5, "A": 1.0}), 3, {"A", "B"}) == []

    def test_n_must_be_positive(self):
        with pytest.raises(ValueError):
            top_n(self.result({}), 0)


def test_ranking_csv_round_trip(tmp_path):
    g = LinkGraph.from_edges([("A", "B"), ("B", "A"), ("A", "C"), ("C", "A")])
    r = cyclerank(g, "A", K=3)
    r.to_csv(tmp_path / "r.csv", "wikiflu test")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "# wikiflu test"
    assert lines[2:] == ["rank,title,score", "1,A,1", "2,B,0.5", "3,C,0.5"]
    assert linkgraph.read_ranking_csv(tmp_path / "r.csv") == [("A", 1.0), ("B", 0.5), ("C", 0.5)]
