"""Directed networks, node-arc incidence matrices and demand vectors."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources

import numpy as np


@dataclass(frozen=True)
class Network:
    """Directed graph on nodes ``0..node_count-1``.

    ``arcs[j] = (tail, head)``.  The incidence matrix has ``-1`` at the tail
    and ``+1`` at the head of each column.  Parallel arcs are allowed.

    ``edges`` optionally records the undirected edge each arc came from as a
    pair of arc indices (forward, backward); scenario generators use it.
    """

    node_count: int
    arcs: tuple
    edges: tuple = field(default=(), compare=False)

    def __post_init__(self):
        arcs = tuple((int(t), int(h)) for t, h in self.arcs)
        object.__setattr__(self, "arcs", arcs)
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))
        if self.node_count < 1:
            raise ValueError("network needs at least one node")
        for t, h in arcs:
            if t == h:
                raise ValueError("self-loop at node %d" % t)
            if not (0 <= t < self.node_count and 0 <= h < self.node_count):
                raise ValueError("arc (%d, %d) out of range" % (t, h))

    @property
    def n(self) -> int:
        return self.node_count

    @property
    def m(self) -> int:
        return len(self.arcs)

    @cached_property
    def tails(self) -> np.ndarray:
        return np.array([a[0] for a in self.arcs], dtype=int).reshape(-1)

    @cached_property
    def heads(self) -> np.ndarray:
        return np.array([a[1] for a in self.arcs], dtype=int).reshape(-1)

    @cached_property
    def incidence(self) -> np.ndarray:
        N = np.zeros((self.n, self.m), dtype=int)
        cols = np.arange(self.m)
        N[self.tails, cols] = -1
        N[self.heads, cols] = 1
        N.setflags(write=False)
        return N

    @cached_property
    def out_arcs(self) -> tuple:
        out = [[] for _ in range(self.n)]
        for j, (t, _) in enumerate(self.arcs):
            out[t].append(j)
        return tuple(tuple(a) for a in out)

    @cached_property
    def in_arcs(self) -> tuple:
        inc = [[] for _ in range(self.n)]
        for j, (_, h) in enumerate(self.arcs):
            inc[h].append(j)
        return tuple(tuple(a) for a in inc)

    def to_json(self) -> str:
        return json.dumps({"node_count": self.n, "arcs": [list(a) for a in self.arcs]})

    @classmethod
    def from_json(cls, text: str) -> "Network":
        data = json.loads(text)
        return cls(int(data["node_count"]), tuple(map(tuple, data["arcs"])))


def _bidirect(n: int, pairs) -> Network:
    pairs = list(pairs)
    k = len(pairs)
    arcs = [(u, v) for u, v in pairs] + [(v, u) for u, v in pairs]
    return Network(n, tuple(arcs), tuple((i, i + k) for i in range(k)))


def build_grid(rows: int, cols: int) -> Network:
    """Bidirected ``rows x cols`` lattice with nodes numbered row-major.

    Arc order: eastward arcs row by row, then westward, then southward,
    then northward.  Undirected edges are listed horizontal first (row-major)
    and then vertical (row-major).
    """
    if rows < 1 or cols < 1 or rows * cols < 2:
        raise ValueError("degenerate grid")
    node = lambda r, c: r * cols + c  # noqa: E731
    horiz = [(node(r, c), node(r, c + 1)) for r in range(rows) for c in range(cols - 1)]
    vert = [(node(r, c), node(r + 1, c)) for r in range(rows - 1) for c in range(cols)]
    east = horiz
    west = [(v, u) for u, v in horiz]
    south = vert
    north = [(v, u) for u, v in vert]
    arcs = east + west + south + north
    h, v = len(horiz), len(vert)
    edges = [(i, h + i) for i in range(h)] + [(2 * h + i, 2 * h + v + i) for i in range(v)]
    return Network(rows * cols, tuple(arcs), tuple(edges))


def load_edge_file(name: str) -> dict:
    with resources.files("netshield.data").joinpath(name).open() as fh:
        return json.load(fh)


def build_nguyen_dupuis() -> Network:
    """The 13-node, 19-edge Nguyen-Dupuis network, bidirected to 38 arcs.

    Arcs ``0..18`` follow the shipped edge list, arcs ``19..37`` are their
    reversals.
    """
    data = load_edge_file("nguyen_dupuis.json")
    return _bidirect(int(data["node_count"]), [tuple(e) for e in data["edges"]])


def demand_vector(net: Network, origin: int, dest: int, amount: float) -> np.ndarray:
    """Node demand vector: ``-amount`` at origin, ``+amount`` at dest."""
    if origin == dest:
        raise ValueError("origin and destination must differ")
    if not amount > 0:
        raise ValueError("demand amount must be positive")
    for v in (origin, dest):
        if not 0 <= v < net.n:
            raise ValueError("node %d out of range" % v)
    d = np.zeros(net.n)
    d[origin] = -float(amount)
    d[dest] = float(amount)
    return d


def demand_destination(d: np.ndarray) -> int:
    pos = np.flatnonzero(np.asarray(d) > 0)
    if pos.size != 1:
        raise ValueError("demand vector must have exactly one positive entry")
    return int(pos[0])


def shortest_paths(net: Network, cost, root: int, reverse: bool = False):
    """Label-correcting shortest paths from ``root`` (or to it if ``reverse``).

    Arc costs must be nonnegative.  Returns ``(dist, pred)`` where ``pred[v]``
    is the arc used to reach ``v`` (the arc leaving ``v`` when ``reverse``),
    ``-1`` at the root and at unreachable nodes, whose distance is ``inf``.
    """
    cost = np.asarray(cost, dtype=float)
    dist = np.full(net.n, np.inf)
    pred = np.full(net.n, -1)
    dist[root] = 0.0
    adj = net.in_arcs if reverse else net.out_arcs
    ends = net.tails if reverse else net.heads
    queue = deque([root])
    queued = np.zeros(net.n, dtype=bool)
    queued[root] = True
    while queue:
        u = queue.popleft()
        queued[u] = False
        du = dist[u]
        for j in adj[u]:
            v = ends[j]
            dv = du + cost[j]
            if dv < dist[v]:
                dist[v] = dv
                pred[v] = j
                if not queued[v]:
                    # small-label-first keeps the number of rescans low
                    if queue and dv < dist[queue[0]]:
                        queue.appendleft(v)
                    else:
                        queue.append(v)
                    queued[v] = True
    return dist, pred


def trace_path(net: Network, pred, start: int, root: int, reverse: bool = False) -> list:
    """Arc list of the tree path between ``root`` and ``start``, in travel order."""
    path = []
    v = start
    while v != root:
        j = pred[v]
        if j < 0:
            raise ValueError("node %d not connected" % start)
        path.append(int(j))
        v = net.arcs[j][1] if reverse else net.arcs[j][0]
    return path if reverse else path[::-1]
