"""Verdicts over configurations and traces."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from . import protocol as P
from .graph import (
    CRASH_EDGE,
    CRASH_NODE,
    DEL_MEMBER,
    INF,
    Graph,
    TopologyEvent,
    hop_diameter,
    weight_from_json,
    weight_to_json,
)
from .oracle import OracleBudgetExceeded, log2_ceil, optimal_steiner
from .simulator import (
    STATE_FIELDS,
    Configuration,
    Engine,
    Scenario,
    Trace,
    configuration_from_snapshot,
    is_quiescent,
    run,
    state_from_json,
    state_to_json,
)


@dataclass
class Verdict:
    name: str
    violations: list[dict] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    skipped: bool = False

    @property
    def passed(self) -> bool:
        return not self.violations

    def fail(self, description: str, round: Optional[int] = None, nodes=()) -> None:
        self.violations.append({"round": round, "nodes": sorted(nodes), "description": description})

    def to_dict(self) -> dict:
        metrics = {
            k: weight_to_json(v) if isinstance(v, (Fraction, float)) else v for k, v in self.metrics.items()
        }
        return {
            "check": self.name,
            "pass": self.passed,
            "skipped": self.skipped,
            "violations": self.violations,
            "metrics": metrics,
        }

    def summary_line(self) -> str:
        status = "SKIP" if self.skipped else ("PASS" if self.passed else "FAIL")
        extra = f" ({len(self.violations)} violations: {self.violations[0]['description']})" if self.violations else ""
        return f"{status} {self.name}{extra}"


def tree_children(states: dict[int, P.NodeState], graph: Graph) -> dict[int, list[int]]:
    kids: dict[int, list[int]] = {v: [] for v in states}
    for v, s in states.items():
        if v != graph.root and s.connected and s.parent in kids and s.parent != v:
            kids[s.parent].append(v)
    return kids


def check_legitimate(c: Configuration) -> Verdict:
    verdict = Verdict("legitimate")
    g = c.graph
    states = c.states
    r = c.round
    root = states.get(g.root)
    if root is None or not P.eval_croot(c.refreshed_view(g.root)):
        verdict.fail("root is not in its canonical state", r, [g.root])

    # (a) the connected nodes form one tree hanging from the root
    in_tree = {g.root}
    for v, s in states.items():
        if not s.connected or v == g.root:
            continue
        path, x = [], v
        while x != g.root:
            sx = states[x]
            if x in path or not sx.connected or sx.parent not in g.neighbors(x):
                break
            path.append(x)
            x = sx.parent
        if x == g.root:
            in_tree.add(v)
        else:
            verdict.fail("connected node not linked to the root by connected parents", r, [v])
    for m in sorted(g.members - in_tree):
        verdict.fail("member outside the tree", r, [m])

    # (b) leaves are members
    kids = tree_children(states, g)
    for v in sorted(in_tree):
        if not kids[v] and v not in g.members:
            verdict.fail("non-member leaf", r, [v])

    # (c) quiescence under refreshed copies
    for v in sorted(states):
        view = c.refreshed_view(v)
        if view.state.waiting:
            verdict.fail("node still waiting", r, [v])
        rules = P.enabled_rules(view)
        if rules:
            verdict.fail(f"rules enabled: {[x.name for x in rules]}", r, [v])

    # (d) recorded distances are realised by the parent chains
    for v in sorted(in_tree - {g.root}):
        s = states[v]
        p = states[s.parent]
        expect = g.weight(v, s.parent) + (0 if p.connect_pt else p.dist)
        if s.dist != expect:
            verdict.fail(f"dist {s.dist} differs from parent-chain weight {expect}", r, [v])
        if s.connect_pt != (s.member or len(kids[v]) > 1):
            verdict.fail("connection-point flag disagrees with the tree", r, [v])
    if not verdict.violations:
        to_tree = _distances_to(g, in_tree)
        for v, s in sorted(states.items()):
            if not s.connected and s.dist != to_tree[v]:
                verdict.fail(f"dist {s.dist} differs from distance to tree {to_tree[v]}", r, [v])

    edges = c.tree_edges()
    verdict.metrics["tree_weight"] = sum((g.weight(u, v) for u, v in edges), 0)
    verdict.metrics["tree_edges"] = [list(e) for e in edges]
    return verdict


def _distances_to(g: Graph, sources: set[int]) -> dict[int, object]:
    dist = {v: INF for v in g.nodes}
    heap = []
    for s in sources:
        dist[s] = 0
        heap.append((0, s))
    heapq.heapify(heap)
    while heap:
        d, x = heapq.heappop(heap)
        if d > dist[x]:
            continue
        for y, w in g.neighbors(x).items():
            if d + w < dist[y]:
                dist[y] = d + w
                heapq.heappush(heap, (d + w, y))
    return dist


def check_competitiveness(c: Configuration) -> Verdict:
    verdict = Verdict("competitiveness")
    g = c.graph
    z = len(g.members)
    w_tree = sum((g.weight(u, v) for u, v in c.tree_edges()), 0)
    verdict.metrics.update(tree_weight=w_tree, z=z)
    if z < 2:
        verdict.skipped = True
        return verdict
    try:
        opt = optimal_steiner(g)
    except OracleBudgetExceeded as exc:
        verdict.skipped = True
        verdict.metrics["oracle"] = str(exc)
        return verdict
    bound = log2_ceil(z)
    ratio = Fraction(w_tree) / Fraction(opt.weight)
    verdict.metrics.update(optimal_weight=opt.weight, ratio=ratio, bound=bound)
    if w_tree > bound * opt.weight:
        verdict.fail(f"W(T)/W(T*) = {ratio} exceeds ceil(log2 {z}) = {bound}", c.round)
    return verdict


# -- trace checks ----------------------------------------------------------------


def _apply_diff(states: dict[int, P.NodeState], node: int, diff: dict) -> None:
    row = state_to_json(states[node])
    for name, (_, new) in diff.items():
        row[1 + STATE_FIELDS.index(name)] = new
    states[node] = state_from_json(row)


def _replay(trace: Trace):
    """Yield (record, states) after applying each state-changing record."""
    states: dict[int, P.NodeState] = {}
    for rec in trace.records:
        t = rec["t"]
        if t == "snapshot" and rec["label"] == "initial":
            states = {x[0]: state_from_json(x) for x in rec["states"]}
        elif t in ("rule", "interrupt", "release"):
            _apply_diff(states, rec["node"], rec["diff"])
        elif t == "spawn":
            states[rec["node"]] = state_from_json(rec["state"])
        elif t == "event":
            e = rec["event"]
            if e["kind"] == CRASH_NODE:
                states.pop(e["node"], None)
        yield rec, states


def check_trace_consistency(trace: Trace) -> Verdict:
    """Diffs replayed from the initial snapshot reproduce every later snapshot,
    diffs agree with the state they are applied to, and channels stay FIFO."""
    verdict = Verdict("trace-consistency")
    last_seq: dict[tuple[int, int], int] = {}
    states: dict[int, P.NodeState] = {}
    seen_initial = False
    for rec in trace.records:
        t = rec["t"]
        if t in ("rule", "interrupt", "release") and seen_initial:
            s = states.get(rec["node"])
            if s is None:
                verdict.fail("change recorded for an unknown node", rec["r"], [rec["node"]])
                continue
            row = state_to_json(s)
            for name, (old, _) in rec["diff"].items():
                if row[1 + STATE_FIELDS.index(name)] != old:
                    verdict.fail(f"diff on {name} does not match replayed state", rec["r"], [rec["node"]])
        if t == "deliver":
            key = (rec["src"], rec["dst"])
            if rec["seq"] >= 0:
                if rec["seq"] <= last_seq.get(key, -1):
                    verdict.fail("channel delivered out of order", rec["r"], list(key))
                last_seq[key] = rec["seq"]
        if t == "snapshot" and rec["label"] == "initial":
            seen_initial = True
        # advance replay
        if t == "snapshot" and rec["label"] == "initial":
            states = {x[0]: state_from_json(x) for x in rec["states"]}
        elif t in ("rule", "interrupt", "release") and rec["node"] in states:
            _apply_diff(states, rec["node"], rec["diff"])
        elif t == "spawn":
            states[rec["node"]] = state_from_json(rec["state"])
        elif t == "event" and rec["event"]["kind"] == CRASH_NODE:
            states.pop(rec["event"]["node"], None)
        if t == "snapshot" and rec["label"] != "initial":
            snap = {x[0]: state_from_json(x) for x in rec["states"]}
            if snap != states:
                bad = sorted(v for v in set(snap) | set(states) if snap.get(v) != states.get(v))
                verdict.fail(f"{rec['label']} snapshot disagrees with replayed records", rec["r"], bad)
    if not seen_initial:
        verdict.fail("trace has no initial snapshot")
    final = trace.snapshots()[-1] if trace.snapshots() else None
    if final is not None:
        edges = sorted(
            [s.parent, v] for v, s in ((x[0], state_from_json(x)) for x in final["states"])
            if s.connected and v != final["graph"]["root"]
        )
        if trace.converged and edges != sorted(trace.summary.get("tree_edges", [])):
            verdict.fail("summary tree edges disagree with the final snapshot")
    return verdict


def check_replay(trace: Trace) -> Verdict:
    """Re-running the recorded scenario reproduces the trace byte for byte."""
    verdict = Verdict("replay")
    again = run(trace.scenario)
    if again.dumps() != trace.dumps():
        a, b = trace.dumps().splitlines(), again.dumps().splitlines()
        first = next((i for i, (x, y) in enumerate(zip(a, b)) if x != y), min(len(a), len(b)))
        verdict.fail(f"replay diverges at line {first + 1}")
    return verdict


def affected_subtree(states: dict[int, P.NodeState], graph: Graph, e: TopologyEvent) -> set[int]:
    """Tree nodes whose attachment goes through the removed member, edge or node."""
    kids = tree_children(states, graph)

    def below(x: int) -> set[int]:
        out, stack = set(), [x]
        while stack:
            y = stack.pop()
            if y in out:
                continue
            out.add(y)
            stack.extend(kids.get(y, ()))
        return out

    if e.kind == DEL_MEMBER:
        return below(e.node) if states[e.node].connected else {e.node}
    if e.kind == CRASH_NODE:
        return below(e.node) if states[e.node].connected else {e.node}
    if e.kind == CRASH_EDGE:
        u, v = e.edge
        if states[v].connected and states[v].parent == u and v != graph.root:
            return below(v)
        if states[u].connected and states[u].parent == v and u != graph.root:
            return below(u)
        return set()
    raise ValueError(f"{e.kind} is not a removal event")


def check_passage(trace: Trace, event_index: int = 0) -> Verdict:
    """Parent pointers of tree nodes outside the affected subtree stay put while
    those nodes remain in the tree, from the event until re-legitimacy."""
    verdict = Verdict("passage")
    records = trace.records
    events = [i for i, r in enumerate(records) if r["t"] == "event"]
    if event_index >= len(events):
        raise ValueError("trace has no such event")
    pos = events[event_index]
    e = TopologyEvent.from_dict(records[pos]["event"])
    if not e.in_lambda:
        raise ValueError(f"{e.kind} has no passage guarantee")
    pre = records[pos - 1]
    if pre["t"] != "snapshot" or pre["label"] != "pre-event":
        raise ValueError("event is not preceded by a pre-event snapshot")
    start = configuration_from_snapshot(pre)
    if not check_legitimate(start).passed:
        raise ValueError("trace does not start legitimate at the event")
    states0 = start.states
    g0 = start.graph
    tree0 = {v for v, s in states0.items() if s.connected}
    affected = affected_subtree(states0, g0, e)
    guarded = {v: states0[v].parent for v in tree0 - affected - {g0.root}}
    verdict.metrics.update(event=e.kind, affected=sorted(affected), guarded=len(guarded))

    states = dict(states0)
    end_round = None
    for rec in records[pos + 1:]:
        t = rec["t"]
        if t == "event":
            raise ValueError("passage needs a single-event trace window")
        if t == "quiescent":
            end_round = rec["r"]
            break
        if t in ("rule", "interrupt", "release") and rec["node"] in states:
            _apply_diff(states, rec["node"], rec["diff"])
            v = rec["node"]
            if v in guarded and "parent" in rec["diff"]:
                s = states[v]
                # a change made while leaving the tree is still a change in the tree
                was_connected = rec["diff"].get("connected", [s.connected])[0]
                if was_connected or s.connected:
                    verdict.fail(
                        f"tree node changed parent {guarded[v]} -> {s.parent} via {rec.get('rule', t)}",
                        rec["r"],
                        [v],
                    )
            if v in guarded and "connected" in rec["diff"] and states[v].connected and states[v].parent != guarded[v]:
                verdict.fail("tree node rejoined under a different parent", rec["r"], [v])
        elif t == "spawn":
            states[rec["node"]] = state_from_json(rec["state"])
        elif t == "snapshot" and rec["label"] == "quiescent":
            break
    if end_round is None:
        verdict.fail("no re-legitimate configuration after the event")
    else:
        quiet = next(
            r for r in records[pos + 1:] if r["t"] == "snapshot" and r["label"] == "quiescent"
        )
        if not check_legitimate(configuration_from_snapshot(quiet)).passed:
            verdict.fail("configuration after the event is not legitimate", end_round)
        verdict.metrics["restabilization_rounds"] = end_round - records[pos]["r"]
    return verdict


def check_round_bound(trace: Trace, factor: int = 5) -> Verdict:
    verdict = Verdict("round-bound")
    if not trace.converged:
        verdict.fail(f"not converged within max_rounds={trace.scenario.max_rounds}")
        return verdict
    final = trace.final_configuration()
    z = len(final.graph.members)
    d = hop_diameter(final.graph)
    bound = factor * max(z * d, 1)
    rounds = trace.summary["rounds_to_converge"]
    verdict.metrics.update(rounds=rounds, z=z, diameter=d, bound=bound)
    if rounds > bound:
        verdict.fail(f"{rounds} rounds exceed {factor}*z*D = {bound}")
    return verdict


def check_no_deadlock(trace: Trace) -> Verdict:
    verdict = Verdict("no-deadlock")
    waiting: dict[int, int] = {}
    begun = 0
    for rec, states in _replay(trace):
        t = rec["t"]
        if t == "snapshot" and rec["label"] == "initial":
            waiting = {v: rec["r"] for v, s in states.items() if s.waiting}
            begun += len(waiting)
        if t in ("rule", "interrupt", "release"):
            change = rec["diff"].get("waiting")
            if change and change[1]:
                waiting[rec["node"]] = rec["r"]
                begun += 1
            elif change and not change[1]:
                waiting.pop(rec["node"], None)
        if t == "event" and rec["event"]["kind"] == CRASH_NODE:
            waiting.pop(rec["event"]["node"], None)
    verdict.metrics["waits"] = begun
    for v, r in sorted(waiting.items()):
        verdict.fail("wait never released", r, [v])
    return verdict


def check_closure(c: Configuration, rounds: int = 50, seed: int = 0) -> Verdict:
    """Event-free rounds from ``c`` change nothing and keep it legitimate."""
    verdict = Verdict("closure")
    scen = Scenario(graph=c.graph, seed=seed, max_rounds=c.round + rounds + 1)
    engine = Engine(scen, c.copy(), rng_name="closure", record=True)
    for _ in range(rounds):
        engine.run_round()
        changes = [r for r in engine.records if r["t"] in ("rule", "interrupt", "release")]
        if changes:
            verdict.fail(f"{len(changes)} state changes", engine.config.round, {r["node"] for r in changes})
            break
        if not check_legitimate(engine.config).passed:
            verdict.fail("left the legitimate set", engine.config.round)
            break
        engine.records.clear()
    verdict.metrics["rounds"] = rounds
    return verdict


def weight_of(x) -> object:
    return weight_from_json(x)
