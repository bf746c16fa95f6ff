"""Time-varying directed graph sequences.

Nodes are 0-based internally; the text format and all user-facing messages
use 1-based ids. An edge ``(j, i)`` means ``j -> i``: agent ``i`` receives
from agent ``j``. Self-loops are stored as ordinary ``(i, i)`` edges.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MODES = ("static", "per-step-random", "C-periodic")
TOPOLOGIES = ("random", "cycle", "ring", "complete")


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class Digraph:
    n: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n < 1:
            raise GraphError("a graph needs at least one node")
        for j, i in self.edges:
            if not (0 <= j < self.n and 0 <= i < self.n):
                raise GraphError(f"edge {j + 1}>{i + 1} outside [1..{self.n}]")

    @classmethod
    def from_edges(cls, n, edges, self_loops=True):
        edges = set(edges)
        if self_loops:
            edges.update((i, i) for i in range(n))
        return cls(n, frozenset(edges))

    @property
    def has_self_loops(self) -> bool:
        return all((i, i) in self.edges for i in range(self.n))

    def in_neighbors(self, i):
        """In-neighbors of ``i``, excluding ``i`` itself."""
        return sorted(j for j, t in self.edges if t == i and j != i)

    def out_neighbors(self, i):
        """Out-neighbors of ``i``, excluding ``i`` itself."""
        return sorted(t for j, t in self.edges if j == i and t != i)

    def adjacency(self) -> np.ndarray:
        """Boolean matrix with ``adj[i, j]`` true iff ``j -> i``."""
        adj = np.zeros((self.n, self.n), dtype=bool)
        for j, i in self.edges:
            adj[i, j] = True
        return adj

    def successors(self):
        succ = [[] for _ in range(self.n)]
        for j, i in sorted(self.edges):
            if i != j:
                succ[j].append(i)
        return succ

    def is_symmetric(self) -> bool:
        return all((i, j) in self.edges for j, i in self.edges)


@dataclass(frozen=True)
class GraphStats:
    diameter: int
    max_edge_utility: int
    strongly_connected: bool


@dataclass(frozen=True)
class GeneratorSpec:
    """How a sequence is realized.

    ``topology`` only matters for ``static`` mode; ``density`` is the
    probability of each extra ordered pair beyond the planted cycle.
    """

    mode: str = "per-step-random"
    density: float = 0.3
    period: int = 1
    topology: str = "random"

    def __post_init__(self):
        if self.mode not in MODES:
            raise GraphError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.topology not in TOPOLOGIES:
            raise GraphError(f"unknown topology {self.topology!r}")
        if not 0.0 <= self.density <= 1.0:
            raise GraphError("density must be in [0, 1]")
        if self.period < 1:
            raise GraphError("period C must be >= 1")


@dataclass(frozen=True)
class DigraphSeq:
    graphs: tuple
    spec: GeneratorSpec
    seed: int

    @property
    def n(self) -> int:
        return self.graphs[0].n

    @property
    def horizon(self) -> int:
        return len(self.graphs)

    def __len__(self):
        return len(self.graphs)

    def __getitem__(self, k):
        return self.graphs[k]


def _reach(succ, start):
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in succ[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


def is_strongly_connected(g: Digraph) -> bool:
    succ = g.successors()
    if len(_reach(succ, 0)) != g.n:
        return False
    pred = [[] for _ in range(g.n)]
    for u, vs in enumerate(succ):
        for v in vs:
            pred[v].append(u)
    return len(_reach(pred, 0)) == g.n


def _distances_to(pred, target, n):
    dist = [-1] * n
    dist[target] = 0
    queue = deque([target])
    while queue:
        v = queue.popleft()
        for u in pred[v]:
            if dist[u] < 0:
                dist[u] = dist[v] + 1
                queue.append(u)
    return dist


def canonical_path(succ, dist_to_t, s):
    """Lexicographically smallest shortest path from ``s`` to the target."""
    path = [s]
    u = s
    while dist_to_t[u] > 0:
        u = min(v for v in succ[u] if dist_to_t[v] == dist_to_t[u] - 1)
        path.append(u)
    return path


def graph_stats(g: Digraph) -> GraphStats:
    """Diameter and maximal edge utility of a strongly connected graph.

    Edge utility counts how many of the canonical shortest paths (one per
    ordered pair, lexicographic tie-break) use an edge. Self-loops never
    shorten a path and are ignored. A single node has no pairs; both
    quantities are then 0.
    """
    if not is_strongly_connected(g):
        raise GraphError("graph_stats requires a strongly connected graph")
    if g.n == 1:
        return GraphStats(0, 0, True)
    succ = g.successors()
    pred = [[] for _ in range(g.n)]
    for u, vs in enumerate(succ):
        for v in vs:
            pred[v].append(u)
    load = {}
    diameter = 0
    for t in range(g.n):
        dist = _distances_to(pred, t, g.n)
        for s in range(g.n):
            if s == t:
                continue
            diameter = max(diameter, dist[s])
            path = canonical_path(succ, dist, s)
            for e in zip(path[:-1], path[1:]):
                load[e] = load.get(e, 0) + 1
    return GraphStats(diameter, max(load.values()), True)


def union_graph(seq: DigraphSeq, start: int, C: int) -> Digraph:
    if C < 1 or start < 0 or start + C > seq.horizon:
        raise GraphError(
            f"window [{start}, {start + C}) outside horizon {seq.horizon}"
        )
    edges = frozenset().union(*(seq.graphs[k].edges for k in range(start, start + C)))
    return Digraph(seq.n, edges)


def _random_cycle(n, rng):
    order = rng.permutation(n)
    return {(int(order[t]), int(order[(t + 1) % n])) for t in range(n)} if n > 1 else set()


def _extra_edges(n, density, rng):
    mask = rng.random((n, n)) < density
    np.fill_diagonal(mask, False)
    return {(int(j), int(i)) for j, i in zip(*np.nonzero(mask))}


def _static_graph(n, spec, rng):
    if spec.topology == "cycle":
        edges = {(t, (t + 1) % n) for t in range(n)} if n > 1 else set()
    elif spec.topology == "ring":
        edges = {(t, (t + 1) % n) for t in range(n)} | {((t + 1) % n, t) for t in range(n)}
        edges = {e for e in edges if e[0] != e[1]}
    elif spec.topology == "complete":
        edges = {(j, i) for j in range(n) for i in range(n) if i != j}
    else:
        edges = _random_cycle(n, rng) | _extra_edges(n, spec.density, rng)
    return Digraph.from_edges(n, edges)


def generate_sequence(n: int, horizon: int, spec: GeneratorSpec, seed: int) -> DigraphSeq:
    """Realize a graph sequence for ``horizon`` steps.

    Strong connectivity holds by construction: every per-step graph carries
    a random Hamiltonian cycle. In C-periodic mode a single cycle is fixed
    and each of its edges is active only at steps ``k = slot (mod C)``, so
    any C consecutive graphs jointly contain the whole cycle.
    """
    if n < 1 or horizon < 1:
        raise GraphError("n and horizon must both be >= 1")
    if spec.mode == "C-periodic" and spec.period > horizon:
        raise GraphError(f"period C={spec.period} exceeds horizon {horizon}")
    rng = np.random.default_rng(seed)

    if spec.mode == "static":
        g = _static_graph(n, spec, rng)
        graphs = (g,) * horizon
    elif spec.mode == "per-step-random":
        graphs = tuple(
            Digraph.from_edges(n, _random_cycle(n, rng) | _extra_edges(n, spec.density, rng))
            for _ in range(horizon)
        )
    else:
        C = spec.period
        cycle = sorted(_random_cycle(n, rng))
        slots = rng.integers(0, C, size=len(cycle))
        graphs = []
        for k in range(horizon):
            active = {e for e, s in zip(cycle, slots) if s == k % C}
            graphs.append(Digraph.from_edges(n, active | _extra_edges(n, spec.density / C, rng)))
        graphs = tuple(graphs)
    return DigraphSeq(graphs, spec, seed)


def check_sequence(seq: DigraphSeq) -> list:
    """Problems with a sequence relative to its mode, as readable strings."""
    problems = []
    for k, g in enumerate(seq.graphs):
        if g.n != seq.n:
            problems.append(f"step {k}: node count {g.n} != {seq.n}")
        if not g.has_self_loops:
            problems.append(f"step {k}: missing self-loops")
    if seq.spec.mode == "C-periodic":
        C = seq.spec.period
        for k in range(seq.horizon - C + 1):
            if not is_strongly_connected(union_graph(seq, k, C)):
                problems.append(f"window [{k}, {k + C}): union not strongly connected")
    else:
        for k, g in enumerate(seq.graphs):
            if not is_strongly_connected(g):
                problems.append(f"step {k}: not strongly connected")
    return problems


def dumps(seq: DigraphSeq) -> str:
    lines = [f"{seq.n} {seq.horizon}"]
    for k, g in enumerate(seq.graphs):
        body = " ".join(f"{j + 1}>{i + 1}" for j, i in sorted(g.edges))
        lines.append(f"{k}: {body}".rstrip())
    return "\n".join(lines) + "\n"


def loads(text: str, spec: GeneratorSpec | None = None, seed: int = 0) -> DigraphSeq:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise GraphError("empty graph sequence file")
    try:
        n, horizon = (int(tok) for tok in lines[0].split())
    except ValueError as exc:
        raise GraphError(f"line 1: bad header {lines[0]!r}") from exc
    graphs = []
    for lineno, line in enumerate(lines[1:], start=2):
        head, _, body = line.partition(":")
        if int(head) != len(graphs):
            raise GraphError(f"line {lineno}: expected step {len(graphs)}, got {head}")
        edges = set()
        for tok in body.split():
            j, _, i = tok.partition(">")
            edges.add((int(j) - 1, int(i) - 1))
        graphs.append(Digraph(n, frozenset(edges)))
    if len(graphs) != horizon:
        raise GraphError(f"header promises {horizon} steps, found {len(graphs)}")
    return DigraphSeq(tuple(graphs), spec or GeneratorSpec(mode="static"), seed)


def save(seq: DigraphSeq, path) -> None:
    Path(path).write_text(dumps(seq))


def load(path) -> DigraphSeq:
    return loads(Path(path).read_text())
