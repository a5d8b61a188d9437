"""Exact and greedy Steiner tree references used by the checkers and tests.

Nothing in here is reachable from the protocol.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import networkx as nx

from .graph import Graph, Weight, edge_key

MAX_ORACLE_NODES = 20
MAX_DP_WORK = 5_000_000


class OracleBudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class SteinerSolution:
    edges: frozenset[tuple[int, int]]
    weight: Weight

    @classmethod
    def from_edges(cls, g: Graph, edges) -> "SteinerSolution":
        keys = frozenset(edge_key(u, v) for u, v in edges)
        return cls(keys, sum((g.weight(u, v) for u, v in keys), 0))

    def is_tree_spanning(self, g: Graph) -> bool:
        if len(g.members) <= 1 and not self.edges:
            return True
        t = nx.Graph(list(self.edges))
        return nx.is_tree(t) and set(g.members) <= set(t.nodes)


def log2_ceil(z: int) -> int:
    """Smallest k with 2**k >= z, exactly, for z >= 1."""
    if z < 1:
        raise ValueError("z must be positive")
    return (z - 1).bit_length()


def _dijkstra_from(g: Graph, src: int) -> tuple[dict, dict]:
    dist = {src: 0}
    pred: dict[int, Optional[int]] = {src: None}
    heap = [(0, src)]
    while heap:
        d, x = heapq.heappop(heap)
        if d > dist[x]:
            continue
        for y, w in sorted(g.neighbors(x).items()):
            nd = d + w
            if y not in dist or nd < dist[y]:
                dist[y] = nd
                pred[y] = x
                heapq.heappush(heap, (nd, y))
    return dist, pred


def optimal_steiner(g: Graph) -> SteinerSolution:
    """Minimum-weight tree spanning the members.

    Dynamic programming over member subsets when there are few members,
    enumeration of Steiner-node subsets when there are few non-members.
    """
    n = len(g.nodes)
    k = len(g.members)
    if n > MAX_ORACLE_NODES:
        raise OracleBudgetExceeded(f"{n} nodes exceed the exact oracle budget of {MAX_ORACLE_NODES}")
    if k <= 1:
        return SteinerSolution(frozenset(), 0)
    dp_work = 3 ** (k - 1) * n
    subset_work = 2 ** (n - k) * n * 8
    if min(dp_work, subset_work) > MAX_DP_WORK:
        raise OracleBudgetExceeded(f"{n} nodes / {k} members exceed the exact oracle budget")
    if subset_work < dp_work:
        return steiner_by_vertex_subsets(g)
    return dreyfus_wagner(g)


def dreyfus_wagner(g: Graph) -> SteinerSolution:
    terminals = sorted(g.members)
    if len(terminals) <= 1:
        return SteinerSolution(frozenset(), 0)
    nodes = sorted(g.nodes)
    sp = {v: _dijkstra_from(g, v) for v in nodes}
    # the last terminal is the DP anchor; masks range over the others
    anchor, rest = terminals[-1], terminals[:-1]
    full = (1 << len(rest)) - 1
    dp: dict[int, dict[int, Weight]] = {}
    back: dict[tuple[int, int], tuple] = {}
    for i, t in enumerate(rest):
        dp[1 << i] = {v: sp[t][0][v] for v in nodes}
        for v in nodes:
            back[(1 << i, v)] = ("path", t)
    for mask in range(1, full + 1):
        if mask & (mask - 1) == 0:
            continue
        best: dict[int, Weight] = {}
        # split at a node u, then join u to v by a shortest path
        merged: dict[int, tuple[Weight, int]] = {}
        low = mask & -mask
        sub = (mask - 1) & mask
        while sub:
            if sub & low:
                other = mask ^ sub
                a, b = dp[sub], dp[other]
                for u in nodes:
                    c = a[u] + b[u]
                    if u not in merged or c < merged[u][0]:
                        merged[u] = (c, sub)
            sub = (sub - 1) & mask
        for v in nodes:
            choice = None
            for u in nodes:
                c = merged[u][0] + sp[u][0][v]
                if v not in best or c < best[v]:
                    best[v] = c
                    choice = u
            back[(mask, v)] = ("join", choice, merged[choice][1])
        dp[mask] = best
    total = dp[full][anchor]

    edges: set[tuple[int, int]] = set()

    def add_path(src: int, dst: int) -> None:
        pred = sp[src][1]
        x = dst
        while pred[x] is not None:
            edges.add(edge_key(x, pred[x]))
            x = pred[x]

    stack = [(full, anchor)]
    while stack:
        mask, v = stack.pop()
        entry = back[(mask, v)]
        if entry[0] == "path":
            add_path(entry[1], v)
        else:
            _, u, sub = entry
            add_path(u, v)
            stack.append((sub, u))
            stack.append((mask ^ sub, u))
    sol = _prune(g, edges)
    # the union of the recorded paths can only be as heavy as the DP value
    if sol.weight != total:
        raise AssertionError(f"reconstructed weight {sol.weight} != DP value {total}")
    return sol


def _prune(g: Graph, edges) -> SteinerSolution:
    """Spanning tree of the union, then strip non-member leaves."""
    t = nx.Graph()
    for u, v in edges:
        t.add_edge(u, v, weight=g.weight(u, v))
    t = nx.minimum_spanning_tree(t, weight="weight")
    changed = True
    while changed:
        changed = False
        for x in list(t.nodes):
            if t.degree(x) <= 1 and x not in g.members:
                t.remove_node(x)
                changed = True
    return SteinerSolution.from_edges(g, t.edges)


def steiner_by_vertex_subsets(g: Graph) -> SteinerSolution:
    """Min over Steiner-node subsets X of a minimum spanning tree of G[S + X]."""
    members = set(g.members)
    if len(members) <= 1:
        return SteinerSolution(frozenset(), 0)
    others = sorted(set(g.nodes) - members)
    G = g.to_networkx()
    best = None
    for r in range(len(others) + 1):
        for extra in itertools.combinations(others, r):
            sub = G.subgraph(members | set(extra))
            if not nx.is_connected(sub):
                continue
            tree = list(nx.minimum_spanning_edges(sub, data=True))
            w = sum(d["weight"] for *_, d in tree)
            if best is None or w < best[0]:
                best = (w, [(u, v) for u, v, _ in tree])
    return SteinerSolution.from_edges(g, best[1])


def steiner_exhaustive(g: Graph) -> Weight:
    """Dumbest route: every edge subset that forms a tree covering the members.

    Exponential in |E|; meant for graphs with a handful of nodes.
    """
    members = set(g.members)
    if len(members) <= 1:
        return 0
    items = sorted(g.edges.items())
    best = None
    for r in range(1, len(g.nodes)):
        for combo in itertools.combinations(items, r):
            touched = {x for (e, _) in combo for x in e}
            if not members <= touched or len(touched) != r + 1:
                continue
            # r edges on r+1 vertices: a tree iff connected
            t = nx.Graph([e for e, _ in combo])
            if not nx.is_connected(t):
                continue
            w = sum(w for _, w in combo)
            if best is None or w < best:
                best = w
    return best


def imase_waxman_greedy(g: Graph, order: Sequence[int]) -> SteinerSolution:
    """Attach members one at a time by a shortest path to the tree built so far."""
    if sorted(order) != sorted(g.members):
        raise ValueError("order must be a permutation of the members")
    if order and order[0] != g.root:
        raise ValueError("order must start at the root")
    in_tree = {order[0]} if order else set()
    edges: set[tuple[int, int]] = set()
    for m in order[1:]:
        if m in in_tree:
            continue
        # multi-source Dijkstra from the tree; ties resolved by node id
        dist = {t: 0 for t in in_tree}
        pred: dict[int, Optional[int]] = {t: None for t in in_tree}
        heap = [(0, t) for t in sorted(in_tree)]
        heapq.heapify(heap)
        done = set()
        while heap:
            d, x = heapq.heappop(heap)
            if x in done:
                continue
            done.add(x)
            if x == m:
                break
            for y, w in sorted(g.neighbors(x).items()):
                nd = d + w
                if y not in dist or nd < dist[y] or (nd == dist[y] and y not in done and x < pred[y]):
                    dist[y] = nd
                    pred[y] = x
                    heapq.heappush(heap, (nd, y))
        x = m
        while pred[x] is not None:
            edges.add(edge_key(x, pred[x]))
            in_tree.add(x)
            x = pred[x]
        in_tree.add(x)
    return SteinerSolution.from_edges(g, edges)
