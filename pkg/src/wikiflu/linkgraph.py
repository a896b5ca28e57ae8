"""Directed page-link graph and reference-relative node rankings.

Three rankings are provided, all exact and deterministic:

* :func:`cyclerank` scores nodes by the bounded-length simple cycles they
  share with a reference page.
* :func:`ppagerank` is personalized PageRank by power iteration.
* :func:`shortest_path_distance` is the directed BFS hop count.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse

logger = logging.getLogger(__name__)

DEFAULT_K = 4
MAX_K = 8

SIGMAS: dict[str, Callable[[int], float]] = {
    "inverse": lambda length: 1.0 / length,
    "exp": lambda length: math.exp(-length),
}


class GraphFormatError(ValueError):
    """Malformed edge-list line."""

    def __init__(self, lineno: int, line: str, reason: str):
        super().__init__(f"line {lineno}: {reason}: {line!r}")
        self.lineno = lineno


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


def normalize_title(title: str) -> str:
    """Wikimedia dump convention: spaces become underscores, case is kept."""
    return title.strip().replace(" ", "_")


@dataclass
class LoadStats:
    self_loops: int = 0
    duplicates: int = 0
    malformed: int = 0
    malformed_lines: list[int] = field(default_factory=list)


class LinkGraph:
    """Immutable directed graph over page titles.

    Node ids are assigned in order of first appearance. Successor and
    predecessor lists are sorted by id so traversal order is fixed.
    """

    def __init__(self, titles: Sequence[str], edges: Iterable[tuple[int, int]]):
        self.titles: tuple[str, ...] = tuple(titles)
        self.index: dict[str, int] = {t: i for i, t in enumerate(self.titles)}
        if len(self.index) != len(self.titles):
            raise ValueError("node titles must be unique")
        n = len(self.titles)
        succ: list[set[int]] = [set() for _ in range(n)]
        pred: list[set[int]] = [set() for _ in range(n)]
        for u, v in edges:
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u}, {v}) references an unknown node")
            if u == v:
                raise ValueError(f"self-loop on {self.titles[u]!r}")
            succ[u].add(v)
            pred[v].add(u)
        self.succ: tuple[tuple[int, ...], ...] = tuple(tuple(sorted(s)) for s in succ)
        self.pred: tuple[tuple[int, ...], ...] = tuple(tuple(sorted(p)) for p in pred)

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[str, str]]) -> "LinkGraph":
        graph, _ = _build(((normalize_title(a), normalize_title(b)) for a, b in edges))
        return graph

    @property
    def n_nodes(self) -> int:
        return len(self.titles)

    @property
    def n_edges(self) -> int:
        return sum(len(s) for s in self.succ)

    def __contains__(self, title: object) -> bool:
        return isinstance(title, str) and normalize_title(title) in self.index

    def node_id(self, title: str) -> int:
        try:
            return self.index[normalize_title(title)]
        except KeyError:
            raise KeyError(f"unknown page title: {title!r}") from None

    def edges(self) -> list[tuple[str, str]]:
        return [(self.titles[u], self.titles[v]) for u, vs in enumerate(self.succ) for v in vs]

    def __repr__(self) -> str:
        return f"LinkGraph(n_nodes={self.n_nodes}, n_edges={self.n_edges})"


def _build(pairs: Iterable[tuple[str, str]], stats: LoadStats | None = None):
    stats = stats if stats is not None else LoadStats()
    index: dict[str, int] = {}
    titles: list[str] = []
    seen: set[tuple[int, int]] = set()
    edges: list[tuple[int, int]] = []
    for a, b in pairs:
        for t in (a, b):
            if t not in index:
                index[t] = len(titles)
                titles.append(t)
        u, v = index[a], index[b]
        if u == v:
            stats.self_loops += 1
            continue
        if (u, v) in seen:
            stats.duplicates += 1
            continue
        seen.add((u, v))
        edges.append((u, v))
    return LinkGraph(titles, edges), stats


def load_edge_list(path: str | Path, strict: bool = True) -> tuple[LinkGraph, LoadStats]:
    """Read a UTF-8 ``source<TAB>target`` edge list.

    Blank lines and lines starting with ``#`` are ignored. Self-loops and
    duplicate edges are dropped and counted. A malformed line raises
    :class:`GraphFormatError` in strict mode, otherwise it is skipped and
    tallied in the returned :class:`LoadStats`.
    """
    stats = LoadStats()

    def pairs():
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.rstrip("\r\n")
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                    if strict:
                        raise GraphFormatError(lineno, line, "expected 'source<TAB>target'")
                    stats.malformed += 1
                    stats.malformed_lines.append(lineno)
                    continue
                yield normalize_title(parts[0]), normalize_title(parts[1])

    graph, stats = _build(pairs(), stats)
    if stats.self_loops or stats.duplicates or stats.malformed:
        logger.info(
            "%s: dropped %d self-loops, %d duplicates, %d malformed lines",
            path, stats.self_loops, stats.duplicates, stats.malformed,
        )
    return graph, stats


@dataclass
class RankingResult:
    """Scores of a ranking run; nodes absent from ``scores`` score 0."""

    method: str
    reference: tuple[str, ...]
    scores: dict[str, float]
    parameters: dict[str, object]

    def score(self, title: str) -> float:
        return self.scores.get(normalize_title(title), 0.0)

    def ranked(self) -> list[tuple[str, float]]:
        return sorted(
            ((t, s) for t, s in self.scores.items() if s > 0), key=lambda ts: (-ts[1], ts[0])
        )

    def to_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            params = " ".join(
                f"{k}={v}" for k, v in sorted(self.parameters.items()) if not isinstance(v, list)
            )
            fh.write(f"# method={self.method} reference={'|'.join(self.reference)} {params}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["rank", "title", "score"])
            for rank, (title, score) in enumerate(self.ranked(), start=1):
                writer.writerow([rank, title, f"{score:.12g}"])


def read_ranking_csv(path: str | Path) -> list[tuple[str, float]]:
    with open(path, encoding="utf-8") as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        return [(row["title"], float(row["score"])) for row in rows]


def _bfs(adj: Sequence[Sequence[int]], source: int, limit: int | None = None) -> dict[int, int]:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        d = dist[u]
        if limit is not None and d >= limit:
            continue
        for v in adj[u]:
            if v not in dist:
                dist[v] = d + 1
                queue.append(v)
    return dist


def cyclerank(
    g: LinkGraph,
    ref: str,
    K: int = DEFAULT_K,
    sigma: str = "inverse",
    max_k: int = MAX_K,
) -> RankingResult:
    """Score nodes by the simple cycles of length <= ``K`` through ``ref``.

    Every node on a cycle of length ``l`` (``l`` nodes, ``l`` edges) gains
    ``sigma(l)`` for that cycle. ``sigma="inverse"`` splits one unit per
    cycle equally over its nodes; ``sigma="exp"`` uses ``exp(-l)``.
    """
    if K < 2:
        raise ValueError(f"K must be >= 2, got {K}")
    if K > max_k:
        raise ValueError(f"K={K} exceeds the configured cap max_k={max_k}")
    if sigma not in SIGMAS:
        raise ValueError(f"unknown sigma {sigma!r}; choose from {sorted(SIGMAS)}")
    weight = SIGMAS[sigma]
    r = g.node_id(ref)

    # A node on a cycle of length <= K through r is within K-1 hops of r
    # in both directions; nothing else can contribute.
    fwd = _bfs(g.succ, r, K - 1)
    back = _bfs(g.pred, r, K - 1)
    keep = {v: back[v] for v in fwd if v in back}

    acc: dict[int, float] = {}
    n_cycles = 0
    path = [r]
    on_path = {r}

    def extend(u: int) -> None:
        nonlocal n_cycles
        depth = len(path)
        for v in g.succ[u]:
            if v == r:
                if depth >= 2:
                    w = weight(depth)
                    for node in path:
                        acc[node] = acc.get(node, 0.0) + w
                    n_cycles += 1
                continue
            if v in on_path or v not in keep:
                continue
            # closing the cycle from v needs at least keep[v] more edges
            if depth + keep[v] > K:
                continue
            path.append(v)
            on_path.add(v)
            extend(v)
            on_path.discard(v)
            path.pop()

    extend(r)
    scores = {g.titles[v]: s for v, s in acc.items()}
    return RankingResult(
        method="cyclerank",
        reference=(g.titles[r],),
        scores=scores,
        parameters={"K": K, "sigma": sigma, "cycles": n_cycles},
    )


def _transition_matrix(g: LinkGraph) -> tuple[sparse.csr_matrix, np.ndarray]:
    n = g.n_nodes
    rows, cols, vals = [], [], []
    for u, vs in enumerate(g.succ):
        if vs:
            p = 1.0 / len(vs)
            for v in vs:
                rows.append(v)
                cols.append(u)
                vals.append(p)
    m = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    dangling = np.array([not vs for vs in g.succ], dtype=bool)
    return m, dangling


def ppagerank(
    g: LinkGraph,
    sources: Iterable[str],
    damping: float = 0.85,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> RankingResult:
    """Personalized PageRank with teleportation uniform over ``sources``.

    Dangling-node mass is sent to the teleport distribution. Iteration stops
    once the L1 change between successive iterates drops below ``tol``;
    the residual history is kept in ``parameters["residuals"]``.
    """
    src = sorted({g.node_id(s) for s in sources})
    if not src:
        raise ValueError("source set is empty")
    if not 0.0 < damping < 1.0:
        raise ValueError(f"damping must lie in (0, 1), got {damping}")
    if tol <= 0:
        raise ValueError("tol must be positive")

    n = g.n_nodes
    m, dangling = _transition_matrix(g)
    teleport = np.zeros(n)
    teleport[src] = 1.0 / len(src)
    x = teleport.copy()
    residuals: list[float] = []
    for _ in range(max_iter):
        x_new = damping * (m @ x + x[dangling].sum() * teleport) + (1.0 - damping) * teleport
        x_new /= x_new.sum()
        res = float(np.abs(x_new - x).sum())
        residuals.append(res)
        x = x_new
        if res < tol:
            break
    else:
        raise ConvergenceError(
            f"personalized PageRank did not converge in {max_iter} iterations "
            f"(L1 residual {residuals[-1]:.3e} >= tol {tol:.1e})",
            residuals[-1],
        )
    scores = {g.titles[i]: float(x[i]) for i in np.flatnonzero(x > 0)}
    return RankingResult(
        method="ppagerank",
        reference=tuple(g.titles[i] for i in src),
        scores=scores,
        parameters={
            "damping": damping,
            "tol": tol,
            "iterations": len(residuals),
            "residuals": residuals,
        },
    )


def shortest_path_distance(g: LinkGraph, source: str, target: str) -> int | None:
    """Directed BFS hop count, or ``None`` when ``target`` is unreachable."""
    s, t = g.node_id(source), g.node_id(target)
    if s == t:
        return 0
    dist = {s: 0}
    queue = deque([s])
    while queue:
        u = queue.popleft()
        for v in g.succ[u]:
            if v not in dist:
                if v == t:
                    return dist[u] + 1
                dist[v] = dist[u] + 1
                queue.append(v)
    return None


def distance_class(distance: int | None) -> str:
    """Table label for a hop distance: ``0``..``3``, else ``>3``.

    Unreachable pages are also labelled ``>3``.
    """
    if distance is None or distance > 3:
        return ">3"
    return str(distance)


def top_n(r: RankingResult, n: int, exclude: Iterable[str] = ()) -> list[str]:
    if n < 1:
        raise ValueError("n must be >= 1")
    skip = {normalize_title(t) for t in exclude}
    return [t for t, _ in r.ranked() if t not in skip][:n]
