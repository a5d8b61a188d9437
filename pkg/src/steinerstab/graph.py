"""Weighted undirected dynamic graphs, topology events and exact distances.

Weights are exact: ``int`` when integral, ``fractions.Fraction`` otherwise.
A :class:`Graph` is an immutable value; :func:`apply_event` returns a new one.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Union

import networkx as nx

Weight = Union[int, Fraction]
INF = math.inf

ADD_MEMBER = "add-member"
DEL_MEMBER = "del-member"
ADD_EDGE = "add-edge"
CRASH_EDGE = "crash-edge"
ADD_NODE = "add-node"
CRASH_NODE = "crash-node"

EVENT_KINDS = (ADD_MEMBER, DEL_MEMBER, ADD_EDGE, CRASH_EDGE, ADD_NODE, CRASH_NODE)
# removal-type events, the class with a passage guarantee
LAMBDA_KINDS = frozenset({DEL_MEMBER, CRASH_EDGE, CRASH_NODE})


class GraphError(ValueError):
    pass


class GraphParseError(GraphError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def as_weight(value) -> Weight:
    """Exact weight from an int, a Fraction or a decimal/rational string."""
    if isinstance(value, bool):
        raise GraphError(f"invalid weight {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            raise GraphError(f"invalid weight {value!r}")
        value = Fraction(str(value))
    try:
        frac = Fraction(value)
    except (ValueError, ZeroDivisionError, TypeError):
        raise GraphError(f"invalid weight {value!r}") from None
    return frac.numerator if frac.denominator == 1 else frac


def edge_key(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True)
class Graph:
    nodes: frozenset[int]
    edges: Mapping[tuple[int, int], Weight]
    members: frozenset[int]
    root: int
    adj: Mapping[int, Mapping[int, Weight]] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", frozenset(self.nodes))
        object.__setattr__(self, "members", frozenset(self.members))
        edges = {}
        adj: dict[int, dict[int, Weight]] = {v: {} for v in self.nodes}
        for (u, v), w in dict(self.edges).items():
            if u == v:
                raise GraphError(f"self-loop on node {u}")
            if u not in adj or v not in adj:
                raise GraphError(f"edge ({u}, {v}) references an unknown node")
            key = edge_key(u, v)
            if key in edges:
                raise GraphError(f"parallel edge ({u}, {v})")
            w = as_weight(w)
            if w <= 0:
                raise GraphError(f"nonpositive weight on edge ({u}, {v})")
            edges[key] = w
            adj[u][v] = w
            adj[v][u] = w
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "adj", adj)
        if self.root not in self.nodes:
            raise GraphError(f"root {self.root} is not a node")
        if self.root not in self.members:
            raise GraphError(f"root {self.root} is not a member")
        if not self.members <= self.nodes:
            raise GraphError("members must be nodes")
        if not self.is_connected():
            raise GraphError("graph is disconnected")

    def __hash__(self):
        return hash((self.nodes, frozenset(self.edges.items()), self.members, self.root))

    def neighbors(self, v: int) -> Mapping[int, Weight]:
        return self.adj[v]

    def weight(self, u: int, v: int) -> Weight:
        return self.edges[edge_key(u, v)]

    def has_edge(self, u: int, v: int) -> bool:
        return edge_key(u, v) in self.edges

    def is_connected(self) -> bool:
        if not self.nodes:
            return False
        start = next(iter(self.nodes))
        seen = {start}
        stack = [start]
        while stack:
            x = stack.pop()
            for y in self.adj[x]:
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
        return len(seen) == len(self.nodes)

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(self.nodes)
        for (u, v), w in self.edges.items():
            g.add_edge(u, v, weight=w)
        return g

    def to_dict(self) -> dict:
        return {
            "nodes": sorted(self.nodes),
            "root": self.root,
            "members": sorted(self.members),
            "edges": [[u, v, weight_to_json(w)] for (u, v), w in sorted(self.edges.items())],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Graph":
        edges = {}
        for item in data["edges"]:
            u, v, w = item
            if edge_key(u, v) in edges:
                raise GraphError(f"parallel edge ({u}, {v})")
            edges[(u, v)] = as_weight(w)
        return cls(
            nodes=frozenset(data["nodes"]),
            edges=edges,
            members=frozenset(data["members"]),
            root=data["root"],
        )


def weight_to_json(w):
    if w == INF:
        return "inf"
    if isinstance(w, Fraction):
        return f"{w.numerator}/{w.denominator}"
    return w


def weight_from_json(x):
    if x == "inf":
        return INF
    return as_weight(x)


# -- graph file ---------------------------------------------------------------


def load_graph(text: str) -> Graph:
    """Parse the line-oriented graph format.

    Header lines ``nodes N`` (ids 1..N, or an explicit id list when more than
    one token follows), ``root R`` and ``members id...``; every other line is an
    edge ``u v w``.  ``#`` starts a comment.  Without a ``nodes`` line the node
    set is whatever the edges mention.
    """
    nodes: Optional[set[int]] = None
    root = None
    members = None
    edges: dict[tuple[int, int], Weight] = {}
    edge_lines: dict[tuple[int, int], int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        try:
            if head == "nodes":
                if not rest:
                    raise GraphParseError(lineno, "nodes needs a count or an id list")
                ids = [int(t) for t in rest]
                nodes = set(range(1, ids[0] + 1)) if len(ids) == 1 else set(ids)
            elif head == "root":
                if len(rest) != 1:
                    raise GraphParseError(lineno, "root takes exactly one id")
                root = int(rest[0])
            elif head == "members":
                members = {int(t) for t in rest}
            else:
                if len(rest) != 2:
                    raise GraphParseError(lineno, f"expected 'u v w', got {line!r}")
                u, v = int(head), int(rest[0])
                try:
                    w = as_weight(rest[1])
                except GraphError as exc:
                    raise GraphParseError(lineno, str(exc)) from None
                if w <= 0:
                    raise GraphParseError(lineno, f"nonpositive weight {rest[1]}")
                if u == v:
                    raise GraphParseError(lineno, f"self-loop on node {u}")
                key = edge_key(u, v)
                if key in edges:
                    raise GraphParseError(lineno, f"parallel edge ({u}, {v})")
                edges[key] = w
                edge_lines[key] = lineno
        except ValueError as exc:
            if isinstance(exc, GraphParseError):
                raise
            raise GraphParseError(lineno, f"malformed line {line!r}") from None
    mentioned = {x for e in edges for x in e}
    if nodes is None:
        nodes = mentioned
    else:
        for key, lineno in edge_lines.items():
            if not set(key) <= nodes:
                raise GraphParseError(lineno, f"edge {key} references an undeclared node")
    if members is None:
        raise GraphError("missing 'members' line")
    if root is None:
        raise GraphError("missing 'root' line")
    if root not in members:
        raise GraphError(f"root {root} not a member")
    return Graph(nodes=frozenset(nodes), edges=edges, members=frozenset(members), root=root)


def dump_graph(g: Graph) -> str:
    ids = sorted(g.nodes)
    if ids == list(range(1, len(ids) + 1)):
        header = f"nodes {len(ids)}"
    else:
        # a single token would read as a count
        header = "nodes " + " ".join(map(str, ids if len(ids) > 1 else ids * 2))
    lines = [
        header,
        f"root {g.root}",
        f"members {' '.join(map(str, sorted(g.members)))}",
    ]
    for (u, v), w in sorted(g.edges.items()):
        lines.append(f"{u} {v} {weight_to_json(w)}")
    return "\n".join(lines) + "\n"


# -- topology events ---------------------------------------------------------


@dataclass(frozen=True)
class TopologyEvent:
    """A topology change applied at the start of round ``at_round``.

    ``node`` is used by member events and node events, ``edge``/``weight`` by
    edge events.  ``links`` lists ``(neighbor, weight)`` pairs of an added node.
    """

    kind: str
    at_round: int = 0
    node: Optional[int] = None
    edge: Optional[tuple[int, int]] = None
    weight: Optional[Weight] = None
    links: tuple[tuple[int, Weight], ...] = ()
    member: bool = False

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise GraphError(f"unknown event kind {self.kind!r}")
        if self.kind in (ADD_EDGE, CRASH_EDGE):
            if self.edge is None or len(self.edge) != 2:
                raise GraphError(f"{self.kind} needs an edge")
            object.__setattr__(self, "edge", tuple(self.edge))
            if self.kind == ADD_EDGE:
                if self.weight is None:
                    raise GraphError("add-edge needs a weight")
                object.__setattr__(self, "weight", as_weight(self.weight))
        elif self.node is None:
            raise GraphError(f"{self.kind} needs a node")
        if self.kind == ADD_NODE:
            links = tuple((int(u), as_weight(w)) for u, w in self.links)
            if not links:
                raise GraphError("add-node needs at least one link")
            object.__setattr__(self, "links", links)
        if self.at_round < 0:
            raise GraphError("at_round must be a natural number")

    @property
    def in_lambda(self) -> bool:
        return self.kind in LAMBDA_KINDS

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind, "at_round": self.at_round}
        if self.node is not None:
            d["node"] = self.node
        if self.edge is not None:
            d["edge"] = list(self.edge)
        if self.weight is not None:
            d["weight"] = weight_to_json(self.weight)
        if self.links:
            d["links"] = [[u, weight_to_json(w)] for u, w in self.links]
        if self.kind == ADD_NODE:
            d["member"] = self.member
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TopologyEvent":
        return cls(
            kind=d["kind"],
            at_round=int(d.get("at_round", 0)),
            node=d.get("node"),
            edge=tuple(d["edge"]) if d.get("edge") is not None else None,
            weight=as_weight(d["weight"]) if d.get("weight") is not None else None,
            links=tuple((u, as_weight(w)) for u, w in d.get("links", ())),
            member=bool(d.get("member", False)),
        )


def apply_event(g: Graph, e: TopologyEvent) -> Graph:
    nodes, edges, members = set(g.nodes), dict(g.edges), set(g.members)
    if e.kind == ADD_MEMBER:
        if e.node not in nodes:
            raise GraphError(f"add-member: unknown node {e.node}")
        if e.node in members:
            raise GraphError(f"add-member: {e.node} is already a member")
        members.add(e.node)
    elif e.kind == DEL_MEMBER:
        if e.node not in members:
            raise GraphError(f"del-member: {e.node} is not a member")
        if e.node == g.root:
            raise GraphError("del-member: the root must stay a member")
        members.discard(e.node)
    elif e.kind == ADD_EDGE:
        u, v = e.edge
        if u not in nodes or v not in nodes:
            raise GraphError(f"add-edge: unknown endpoint in {e.edge}")
        if edge_key(u, v) in edges:
            raise GraphError(f"add-edge: duplicate edge {e.edge}")
        edges[edge_key(u, v)] = e.weight
    elif e.kind == CRASH_EDGE:
        key = edge_key(*e.edge)
        if key not in edges:
            raise GraphError(f"crash-edge: no edge {e.edge}")
        del edges[key]
    elif e.kind == ADD_NODE:
        if e.node in nodes:
            raise GraphError(f"add-node: duplicate node {e.node}")
        nodes.add(e.node)
        for u, w in e.links:
            if u not in g.nodes:
                raise GraphError(f"add-node: unknown neighbor {u}")
            if edge_key(u, e.node) in edges:
                raise GraphError(f"add-node: duplicate link to {u}")
            edges[edge_key(u, e.node)] = w
        if e.member:
            members.add(e.node)
    elif e.kind == CRASH_NODE:
        if e.node not in nodes:
            raise GraphError(f"crash-node: unknown node {e.node}")
        if e.node == g.root:
            raise GraphError("crash-node: the root cannot crash")
        nodes.discard(e.node)
        members.discard(e.node)
        edges = {k: w for k, w in edges.items() if e.node not in k}
    try:
        return Graph(nodes=frozenset(nodes), edges=edges, members=frozenset(members), root=g.root)
    except GraphError as exc:
        if "disconnected" in str(exc):
            raise GraphError(f"{e.kind} disconnects graph") from None
        raise


def inverse_event(g: Graph, e: TopologyEvent) -> TopologyEvent:
    """The event undoing ``e`` when ``e`` is applied to ``g``."""
    if e.kind == ADD_MEMBER:
        return TopologyEvent(DEL_MEMBER, e.at_round, node=e.node)
    if e.kind == DEL_MEMBER:
        return TopologyEvent(ADD_MEMBER, e.at_round, node=e.node)
    if e.kind == ADD_EDGE:
        return TopologyEvent(CRASH_EDGE, e.at_round, edge=e.edge)
    if e.kind == CRASH_EDGE:
        return TopologyEvent(ADD_EDGE, e.at_round, edge=e.edge, weight=g.weight(*e.edge))
    if e.kind == ADD_NODE:
        return TopologyEvent(CRASH_NODE, e.at_round, node=e.node)
    links = tuple(sorted(g.neighbors(e.node).items()))
    return TopologyEvent(ADD_NODE, e.at_round, node=e.node, links=links, member=e.node in g.members)


# -- distances ---------------------------------------------------------------


def shortest_path_distance(g: Graph, u: int, v: int) -> Weight:
    if u not in g.nodes or v not in g.nodes:
        raise GraphError(f"unknown node in ({u}, {v})")
    if u == v:
        return 0
    return nx.dijkstra_path_length(g.to_networkx(), u, v)


def all_pairs_distances(g: Graph) -> dict[int, dict[int, Weight]]:
    return {u: dict(d) for u, d in nx.all_pairs_dijkstra_path_length(g.to_networkx())}


def hop_diameter(g: Graph) -> int:
    if len(g.nodes) == 1:
        return 0
    return nx.diameter(g.to_networkx())


# -- random instances --------------------------------------------------------


def random_graph(
    rng: random.Random,
    n: int,
    n_members: Optional[int] = None,
    extra_edge_p: float = 0.25,
    max_weight: int = 10,
) -> Graph:
    """Random connected graph on ids 1..n: a random spanning tree plus extra edges."""
    if n < 1:
        raise GraphError("need at least one node")
    ids = list(range(1, n + 1))
    order = ids[:]
    rng.shuffle(order)
    edges: dict[tuple[int, int], Weight] = {}
    for i in range(1, n):
        u, v = order[i], order[rng.randrange(i)]
        edges[edge_key(u, v)] = rng.randint(1, max_weight)
    for i in range(n):
        for j in range(i + 1, n):
            key = (ids[i], ids[j])
            if key not in edges and rng.random() < extra_edge_p:
                edges[key] = rng.randint(1, max_weight)
    if n_members is None:
        n_members = rng.randint(min(2, n), n)
    members = rng.sample(ids, n_members)
    return Graph(nodes=frozenset(ids), edges=edges, members=frozenset(members), root=members[0])
