"""Deterministic round-based engine for asynchronous FIFO message passing.

A round is: apply the topology events stamped for it, every node enqueues its
InfoMsg on every incident channel, all queued messages are delivered in an
adversarial (seeded) order that respects per-channel FIFO, then waiting nodes
are given the chance to release.  Every state change lands in the trace as a
rule, interrupt or release record carrying the field diff.
"""

from __future__ import annotations

import json
import random
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

from . import protocol as P
from .graph import (
    ADD_EDGE,
    ADD_NODE,
    CRASH_EDGE,
    CRASH_NODE,
    INF,
    Graph,
    TopologyEvent,
    all_pairs_distances,
    apply_event,
    weight_from_json,
    weight_to_json,
)

STATE_FIELDS = ("parent", "level", "dist", "member", "need", "connected", "connect_pt", "waiting")
CORRUPTIBLE = tuple(f for f in STATE_FIELDS if f != "member")
ADVERSARIES = ("random", "greedy")
ATOMICITY = ("coarse", "fine")
TRACE_FORMAT = "steinerstab-trace/1"


def rng_stream(seed: int, name: str) -> random.Random:
    """Independent generator for one named consumer of the scenario seed."""
    return random.Random(f"{seed}/{name}")


# -- scenario ------------------------------------------------------------------


@dataclass(frozen=True)
class CorruptionSpec:
    """How the initial configuration is produced.

    ``mode`` is ``"random"`` (arbitrary state) or ``"legitimate"`` (a verified
    stabilized configuration).  In random mode only ``variables`` are drawn at
    random, the rest keep their legitimate values; ``copies`` and
    ``channel_garbage`` also corrupt neighbor copies and in-flight messages.
    """

    mode: str = "random"
    variables: tuple[str, ...] = CORRUPTIBLE
    copies: bool = True
    channel_garbage: bool = True

    def __post_init__(self):
        if self.mode not in ("random", "legitimate"):
            raise ValueError(f"unknown corruption mode {self.mode!r}")
        object.__setattr__(self, "variables", tuple(self.variables))
        bad = set(self.variables) - set(CORRUPTIBLE)
        if bad:
            raise ValueError(f"cannot corrupt {sorted(bad)}")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "variables": list(self.variables),
            "copies": self.copies,
            "channel_garbage": self.channel_garbage,
        }

    @classmethod
    def from_dict(cls, d) -> "CorruptionSpec":
        if isinstance(d, str):
            return cls(mode=d)
        return cls(
            mode=d.get("mode", "random"),
            variables=tuple(d.get("variables", cls.variables)),
            copies=d.get("copies", True),
            channel_garbage=d.get("channel_garbage", True),
        )


@dataclass(frozen=True)
class Scenario:
    graph: Graph
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)
    events: tuple[TopologyEvent, ...] = ()
    seed: int = 0
    max_rounds: int = 1000
    adversary: str = "random"
    atomic: str = "coarse"

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(sorted(self.events, key=lambda e: e.at_round)))
        if self.max_rounds <= 0:
            raise ValueError("max_rounds must be positive")
        if self.adversary not in ADVERSARIES:
            raise ValueError(f"unknown adversary {self.adversary!r}")
        if self.atomic not in ATOMICITY:
            raise ValueError(f"unknown atomicity {self.atomic!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit natural")

    def to_dict(self) -> dict:
        return {
            "graph": self.graph.to_dict(),
            "corruption": self.corruption.to_dict(),
            "events": [e.to_dict() for e in self.events],
            "seed": self.seed,
            "max_rounds": self.max_rounds,
            "adversary": self.adversary,
            "atomic": self.atomic,
        }

    @classmethod
    def from_dict(cls, d, base_dir: Optional[Path] = None) -> "Scenario":
        from .graph import load_graph

        if "graph" in d:
            graph = Graph.from_dict(d["graph"])
        elif "graph_file" in d:
            path = Path(d["graph_file"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            graph = load_graph(path.read_text())
        else:
            raise ValueError("scenario needs 'graph' or 'graph_file'")
        return cls(
            graph=graph,
            corruption=CorruptionSpec.from_dict(d.get("corruption", {})),
            events=tuple(TopologyEvent.from_dict(e) for e in d.get("events", ())),
            seed=int(d.get("seed", 0)),
            max_rounds=int(d.get("max_rounds", 1000)),
            adversary=d.get("adversary", "random"),
            atomic=d.get("atomic", "coarse"),
        )


def load_scenario(path) -> Scenario:
    path = Path(path)
    return Scenario.from_dict(json.loads(path.read_text()), base_dir=path.parent)


# -- configuration ---------------------------------------------------------------


@dataclass
class Configuration:
    views: dict[int, P.NeighborView]
    channels: dict[tuple[int, int], deque]
    graph: Graph
    round: int = 0
    sent: dict[tuple[int, int], int] = field(default_factory=dict)

    @property
    def states(self) -> dict[int, P.NodeState]:
        return {v: view.state for v, view in self.views.items()}

    def copy(self) -> "Configuration":
        return Configuration(
            views=dict(self.views),
            channels={k: deque(q) for k, q in self.channels.items()},
            graph=self.graph,
            round=self.round,
            sent=dict(self.sent),
        )

    def refreshed_view(self, v: int) -> P.NeighborView:
        """``v``'s view with every neighbor copy equal to that neighbor's real state."""
        view = self.views[v]
        nbrs = {
            u: (P.make_info_msg(self.views[u].state), w) for u, w in self.graph.neighbors(v).items()
        }
        return replace(view, neighbors=nbrs)

    def tree_edges(self) -> list[tuple[int, int]]:
        """Parent edges of connected non-root nodes, as (parent, child)."""
        out = []
        for v, view in sorted(self.views.items()):
            s = view.state
            if s.connected and not view.is_root and s.parent in self.graph.neighbors(v):
                out.append((s.parent, v))
        return out


def _view_for(graph: Graph, state: P.NodeState, copies: dict[int, P.InfoMsg]) -> P.NeighborView:
    nbrs = {u: (copies[u], w) for u, w in graph.neighbors(state.id).items()}
    return P.NeighborView(
        state=state, neighbors=nbrs, is_root=state.id == graph.root, level_cap=len(graph.nodes)
    )


def _empty_channels(graph: Graph) -> dict[tuple[int, int], deque]:
    ch = {}
    for u, v in graph.edges:
        ch[(u, v)] = deque()
        ch[(v, u)] = deque()
    return ch


def detached_configuration(graph: Graph) -> Configuration:
    """Root canonical, every other node detached, copies exact."""
    states = {
        v: P.NodeState.canonical_root(v) if v == graph.root else P.NodeState.detached(v, v in graph.members)
        for v in graph.nodes
    }
    msgs = {v: P.make_info_msg(s) for v, s in states.items()}
    views = {v: _view_for(graph, s, msgs) for v, s in states.items()}
    return Configuration(views=views, channels=_empty_channels(graph), graph=graph)


def _random_dist(rng: random.Random, v: int, graph: Graph, dists) -> object:
    cands = [0, INF]
    cands.extend(graph.neighbors(v).values())
    cands.extend(dists[v].values())
    return rng.choice(cands)


def _random_fields(rng: random.Random, v: int, graph: Graph, dists, n: int) -> dict:
    return {
        "parent": rng.choice(sorted(graph.neighbors(v)) + [v]),
        "level": rng.randint(0, 2 * n),
        "dist": _random_dist(rng, v, graph, dists),
        "need": rng.random() < 0.5,
        "connected": rng.random() < 0.5,
        "connect_pt": rng.random() < 0.5,
        "waiting": rng.random() < 0.125,
    }


def _random_msg(rng: random.Random, u: int, graph: Graph, dists, n: int) -> P.InfoMsg:
    f = _random_fields(rng, u, graph, dists, n)
    return P.InfoMsg(u, f["parent"], f["level"], f["dist"], f["need"], f["connected"], f["connect_pt"])


def init(s: Scenario) -> Configuration:
    if s.corruption.mode == "legitimate":
        return legitimate_configuration(s.graph, s.seed)
    g = s.graph
    variables = set(s.corruption.variables)
    full = variables == set(CORRUPTIBLE)
    base = detached_configuration(g) if full else legitimate_configuration(g, s.seed)
    rng = rng_stream(s.seed, "corruption")
    dists = all_pairs_distances(g)
    n = len(g.nodes)
    views = {}
    for v in sorted(g.nodes):
        view = base.views[v]
        drawn = _random_fields(rng, v, g, dists, n)
        st = replace(view.state, **{k: drawn[k] for k in variables})
        if st.waiting:
            st = replace(st, connected=False, dist=INF, connect_pt=False)
        nbrs = dict(view.neighbors)
        if s.corruption.copies:
            for u in sorted(nbrs):
                nbrs[u] = (_random_msg(rng, u, g, dists, n), nbrs[u][1])
        views[v] = replace(view, state=st, neighbors=nbrs)
    config = Configuration(views=views, channels=_empty_channels(g), graph=g)
    if s.corruption.channel_garbage:
        for key in sorted(config.channels):
            if rng.random() < 0.5:
                config.channels[key].append((-1, _random_msg(rng, key[0], g, dists, n)))
    return config


_legit_cache: dict = {}


def legitimate_configuration(graph: Graph, seed: int = 0) -> Configuration:
    """Stabilize from the detached configuration and return the verified result.

    Raises RuntimeError if the engine fails to reach a legitimate state.
    """
    key = (graph, seed)
    if key not in _legit_cache:
        from .checkers import check_legitimate

        scen = Scenario(graph=graph, seed=seed, max_rounds=100 * (len(graph.nodes) + 1))
        engine = Engine(scen, detached_configuration(graph), rng_name="warmup", record=False)
        engine.run_until_quiescent()
        config = engine.config
        verdict = check_legitimate(config)
        if not engine.quiescent or not verdict.passed:
            raise RuntimeError(f"could not stabilize graph for a legitimate start: {verdict.violations[:3]}")
        views = {v: config.refreshed_view(v) for v in config.views}
        _legit_cache[key] = Configuration(views=views, channels=_empty_channels(graph), graph=graph)
    return _legit_cache[key].copy()


# -- trace -----------------------------------------------------------------------


def state_to_json(s: P.NodeState) -> list:
    return [
        s.id, s.parent, s.level, weight_to_json(s.dist), s.member, s.need, s.connected, s.connect_pt, s.waiting
    ]


def state_from_json(x: list) -> P.NodeState:
    i, parent, level, dist, member, need, connected, cpt, waiting = x
    return P.NodeState(i, parent, level, weight_from_json(dist), member, need, connected, cpt, waiting)


def _field_json(name: str, value):
    return weight_to_json(value) if name == "dist" else value


def state_diff(before: P.NodeState, after: P.NodeState) -> dict:
    out = {}
    for name in STATE_FIELDS:
        a, b = getattr(before, name), getattr(after, name)
        if a != b:
            out[name] = [_field_json(name, a), _field_json(name, b)]
    return out


def snapshot(config: Configuration, label: str) -> dict:
    return {
        "t": "snapshot",
        "r": config.round,
        "label": label,
        "graph": config.graph.to_dict(),
        "states": [state_to_json(config.views[v].state) for v in sorted(config.views)],
    }


@dataclass
class Trace:
    header: dict
    records: list[dict]
    summary: dict

    def lines(self) -> Iterable[str]:
        yield _dumps(self.header)
        for r in self.records:
            yield _dumps(r)
        yield _dumps(self.summary)

    def dumps(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.dumps())

    @property
    def scenario(self) -> Scenario:
        return Scenario.from_dict(self.header["scenario"])

    @property
    def converged(self) -> bool:
        return bool(self.summary.get("converged"))

    def snapshots(self, label: Optional[str] = None) -> list[dict]:
        return [r for r in self.records if r["t"] == "snapshot" and (label is None or r["label"] == label)]

    def final_configuration(self) -> Configuration:
        return configuration_from_snapshot(self.snapshots()[-1])

    @classmethod
    def loads(cls, text: str) -> "Trace":
        rows = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"trace line {lineno}: {exc.msg}") from None
        if len(rows) < 2 or rows[0].get("t") != "header" or rows[-1].get("t") != "summary":
            raise ValueError("trace must start with a header record and end with a summary record")
        if rows[0].get("format") != TRACE_FORMAT:
            raise ValueError(f"unsupported trace format {rows[0].get('format')!r}")
        return cls(header=rows[0], records=rows[1:-1], summary=rows[-1])

    @classmethod
    def read(cls, path) -> "Trace":
        return cls.loads(Path(path).read_text())


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def configuration_from_snapshot(snap: dict) -> Configuration:
    """Configuration with exact copies and empty channels."""
    graph = Graph.from_dict(snap["graph"])
    states = {x[0]: state_from_json(x) for x in snap["states"]}
    msgs = {v: P.make_info_msg(s) for v, s in states.items()}
    views = {v: _view_for(graph, s, msgs) for v, s in states.items()}
    return Configuration(views=views, channels=_empty_channels(graph), graph=graph, round=snap["r"])


# -- engine ----------------------------------------------------------------------


class Engine:
    """Mutable driver around a :class:`Configuration`; one instance per run."""

    def __init__(
        self,
        scenario: Scenario,
        config: Configuration,
        rng_name: str = "schedule",
        record: bool = True,
    ):
        self.scenario = scenario
        self.config = config
        self.rng = rng_stream(scenario.seed, rng_name)
        self.record = record
        self.records: list[dict] = []
        self.messages = 0
        self.dropped = 0
        self.changes = 0
        self.quiescent = False
        self.max_steps = 1 if scenario.atomic == "fine" else None
        self.pending = deque(scenario.events)

    def _emit(self, rec: dict) -> None:
        if self.record:
            self.records.append(rec)

    def _set_state(self, v: int, view: P.NeighborView, kind: str, before: P.NodeState, **extra) -> None:
        self.config.views[v] = view
        diff = state_diff(before, view.state)
        if diff:
            self.changes += 1
            self._emit({"t": kind, "r": self.config.round, "node": v, "diff": diff, **extra})

    # step 1
    def apply_events(self) -> None:
        c = self.config
        while self.pending and self.pending[0].at_round <= c.round:
            e = self.pending.popleft()
            self._emit(snapshot(c, "pre-event"))
            self._emit({"t": "event", "r": c.round, "event": e.to_dict()})
            c.graph = apply_event(c.graph, e)
            if e.kind == CRASH_NODE:
                del c.views[e.node]
            for key in [k for k in c.channels if not (c.graph.has_edge(*k) and k[0] in c.graph.nodes)]:
                self.dropped += len(c.channels.pop(key))
            if e.kind == ADD_NODE:
                st = P.NodeState.detached(e.node, e.member)
                nbrs = {u: (P.InfoMsg.placeholder(u), w) for u, w in e.links}
                c.views[e.node] = P.NeighborView(state=st, neighbors=nbrs, is_root=False)
                self._emit({"t": "spawn", "r": c.round, "node": e.node, "state": state_to_json(st)})
            cap = len(c.graph.nodes)
            c.views = {v: replace(view, level_cap=cap) for v, view in c.views.items()}
            for u, v in c.graph.edges:
                c.channels.setdefault((u, v), deque())
                c.channels.setdefault((v, u), deque())
            links = dict(e.links)
            for v in sorted(c.views):
                if e.kind == ADD_NODE and v == e.node:
                    continue
                view = c.views[v]
                new = P.handle_interrupt(view, e, link_weight=links.get(v))
                if new is not view:
                    self._set_state(v, new, "interrupt", view.state, event=e.kind)
            self._emit({"t": "graph", "r": c.round, "graph": c.graph.to_dict()})

    # step 2
    def broadcast(self) -> None:
        c = self.config
        for v in sorted(c.views):
            msg = P.make_info_msg(c.views[v].state)
            for u in sorted(c.graph.neighbors(v)):
                seq = c.sent.get((v, u), 0)
                c.sent[(v, u)] = seq + 1
                c.channels[(v, u)].append((seq, msg))
                self.messages += 1
        c.views = {v: replace(view, broadcast_due=False) for v, view in c.views.items()}

    def _pick(self, live: list[tuple[int, int]]) -> tuple[int, int]:
        if self.scenario.adversary == "random":
            return live[self.rng.randrange(len(live))]
        # greedy: hold back the messages closest to the tree
        best = max(self.config.channels[k][0][1].dist for k in live)
        top = [k for k in live if self.config.channels[k][0][1].dist == best]
        return top[self.rng.randrange(len(top))]

    # step 3
    def deliver_all(self) -> None:
        c = self.config
        live = sorted(k for k, q in c.channels.items() if q)
        while live:
            key = self._pick(live)
            seq, msg = c.channels[key].popleft()
            if not c.channels[key]:
                live.remove(key)
            src, dst = key
            self._emit({"t": "deliver", "r": c.round, "src": src, "dst": dst, "seq": seq})
            view = c.views[dst]
            new, fired = P.handle_info_msg(view, msg, self.max_steps)
            if not fired:
                c.views[dst] = new
                continue
            states = [before for _, before in fired] + [new.state]
            for i, (rule, before) in enumerate(fired):
                rec = {"t": "rule", "r": c.round, "node": dst, "rule": rule.name,
                       "diff": state_diff(before, states[i + 1])}
                if rule is P.RuleId.CR3:
                    rec["wait"] = True
                self.changes += 1
                self._emit(rec)
            c.views[dst] = new

    # step 4
    def release(self) -> None:
        c = self.config
        for v in sorted(c.views):
            view = c.views[v]
            if view.state.waiting:
                new = P.release_wait(view)
                if new is not view:
                    self._set_state(v, new, "release", view.state)

    def run_round(self) -> bool:
        """One round; True if nothing changed and the configuration is quiescent."""
        before = self.changes
        self.apply_events()
        self.broadcast()
        self.deliver_all()
        self.release()
        self.config.round += 1
        self.quiescent = self.changes == before and is_quiescent(self.config)
        return self.quiescent

    def run_until_quiescent(self) -> None:
        while self.config.round < self.scenario.max_rounds:
            if self.run_round() and not self.pending:
                return


def is_quiescent(config: Configuration) -> bool:
    """No waiting node and no enabled rule anywhere under refreshed copies."""
    for v, view in config.views.items():
        if view.state.waiting:
            return False
        if P.enabled_rules(config.refreshed_view(v)):
            return False
    return True


def run_round(c: Configuration, s: Scenario) -> Configuration:
    """Functional single round on a copy of ``c`` (no trace)."""
    engine = Engine(s, c.copy(), rng_name=f"schedule/{c.round}", record=False)
    engine.pending = deque(e for e in s.events if e.at_round == c.round)
    engine.run_round()
    return engine.config


def run(s: Scenario) -> Trace:
    config = init(s)
    engine = Engine(s, config)
    engine._emit(snapshot(config, "initial"))
    quiescent_at = []
    last_event = 0
    while config.round < s.max_rounds:
        if engine.pending and engine.pending[0].at_round <= config.round:
            last_event = config.round
        if engine.run_round():
            quiescent_at.append(config.round)
            engine._emit({"t": "quiescent", "r": config.round})
            engine._emit(snapshot(config, "quiescent"))
            if not engine.pending:
                break
            nxt = engine.pending[0].at_round
            if nxt > config.round:
                engine._emit({"t": "skip", "r": config.round, "to": nxt})
                config.round = nxt
    converged = engine.quiescent and not engine.pending
    if not converged:
        engine._emit(snapshot(config, "final"))
    tree = config.tree_edges()
    summary = {
        "t": "summary",
        "converged": converged,
        "rounds": config.round,
        "rounds_to_converge": (config.round - last_event) if converged else None,
        "quiescent_at": quiescent_at,
        "tree_edges": [list(e) for e in tree],
        "tree_weight": weight_to_json(sum(config.graph.weight(u, v) for u, v in tree)),
        "messages": engine.messages,
        "dropped": engine.dropped,
        "members": sorted(config.graph.members),
    }
    header = {"t": "header", "format": TRACE_FORMAT, "scenario": s.to_dict()}
    return Trace(header=header, records=engine.records, summary=summary)
