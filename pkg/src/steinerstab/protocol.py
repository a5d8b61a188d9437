"""Per-node protocol: state, guards, rules and message/interrupt handlers.

Everything here is a pure function of a :class:`NeighborView`, the node's own
state together with the last copy it received from each neighbor.  Rules are
tried in priority order RR < DR1 < DR2 < NR1 < NR2 < CR1 < CR2 < CR3 < TR.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Union

from .graph import (
    ADD_EDGE,
    ADD_MEMBER,
    ADD_NODE,
    CRASH_EDGE,
    CRASH_NODE,
    DEL_MEMBER,
    Fraction,
    TopologyEvent,
    Weight,
)

INF = math.inf
Dist = Union[int, Fraction, float]  # float only for +inf


class RuleId(enum.IntEnum):
    RR = 0
    DR1 = 1
    DR2 = 2
    NR1 = 3
    NR2 = 4
    CR1 = 5
    CR2 = 6
    CR3 = 7
    TR = 8


class ProtocolError(RuntimeError):
    """A rule was applied outside its guard, or a local fixpoint diverged."""


@dataclass(frozen=True)
class NodeState:
    id: int
    parent: int
    level: int
    dist: Dist
    member: bool
    need: bool
    connected: bool
    connect_pt: bool
    waiting: bool = False

    @classmethod
    def canonical_root(cls, id: int) -> "NodeState":
        return cls(id, id, 0, 0, True, True, True, True)

    @classmethod
    def detached(cls, id: int, member: bool) -> "NodeState":
        return cls(id, id, 0, INF, member, False, False, False)


@dataclass(frozen=True)
class InfoMsg:
    """The six advertised variables of ``sender``; ``member`` is never sent."""

    sender: int
    parent: int
    level: int
    dist: Dist
    need: bool
    connected: bool
    connect_pt: bool

    @classmethod
    def placeholder(cls, sender: int) -> "InfoMsg":
        # copy held for a neighbor not heard from yet
        return cls(sender, sender, 0, INF, False, False, False)


def make_info_msg(s: NodeState) -> InfoMsg:
    return InfoMsg(s.id, s.parent, s.level, s.dist, s.need, s.connected, s.connect_pt)


@dataclass(frozen=True)
class NeighborView:
    state: NodeState
    neighbors: Mapping[int, tuple[InfoMsg, Weight]] = field(default_factory=dict)
    is_root: bool = False
    broadcast_due: bool = False
    # levels at or above this are invalid; None means unbounded
    level_cap: Optional[int] = None

    @property
    def id(self) -> int:
        return self.state.id

    def with_state(self, s: NodeState) -> "NeighborView":
        return replace(self, state=s, broadcast_due=self.broadcast_due or s != self.state)


# -- predicates ----------------------------------------------------------------


def eval_croot(v: NeighborView) -> bool:
    s = v.state
    return (
        s.dist == 0
        and s.parent == s.id
        and s.need
        and s.connected
        and s.connect_pt
        and s.level == 0
    )


def level_ok(v: NeighborView, level: int) -> bool:
    return v.level_cap is None or level < v.level_cap


def parent_level_ok(v: NeighborView) -> bool:
    """Parent is a neighbor and own level is one more than its copied level."""
    s = v.state
    entry = v.neighbors.get(s.parent)
    return (
        entry is not None
        and s.parent != s.id
        and s.level == entry[0].level + 1
        and level_ok(v, s.level)
    )


def eval_cparent(v: NeighborView) -> bool:
    s = v.state
    if not parent_level_ok(v):
        return False
    for m, _ in v.neighbors.values():
        if m.parent == s.id and m.level != s.level + 1:
            return False
    return True


def eval_asked_connection(v: NeighborView) -> bool:
    me = v.state.id
    return any(m.parent == me and m.need for m, _ in v.neighbors.values())


def _argmin(candidates) -> tuple[Dist, Optional[int]]:
    best, best_id = INF, None
    for value, uid in candidates:
        if value < best or (value == best and (best_id is None or uid < best_id)):
            best, best_id = value, uid
    return best, best_id


def not_connected_candidates(v: NeighborView) -> dict[int, Dist]:
    """Per-neighbor distance to the tree for a node outside it.

    Non-connected neighbors whose parent is ``v`` are skipped: their distance
    runs through ``v`` or is stale.
    """
    me = v.state.id
    return {
        uid: (w if m.connected else m.dist + w)
        for uid, (m, w) in v.neighbors.items()
        if not (m.parent == me and not m.connected) and level_ok(v, m.level + 1)
    }


def connected_candidates(v: NeighborView) -> dict[int, Dist]:
    """Per-neighbor distance to a connection point for a node inside the tree.

    Only connected neighbors of strictly lower level that are not children of
    ``v`` qualify, so a switch can never close a cycle.  A relay that is not a
    connection point only counts when it is the current parent.
    """
    s = v.state
    return {
        uid: (w if m.connect_pt else m.dist + w)
        for uid, (m, w) in v.neighbors.items()
        if m.connected
        and m.parent != s.id
        and m.level < s.level
        and level_ok(v, m.level + 1)
        and (m.connect_pt or uid == s.parent)
    }


def _best(v: NeighborView, cands: dict[int, Dist]) -> tuple[Dist, int]:
    if not v.neighbors:
        raise ProtocolError(f"node {v.id} has no neighbors")
    if not cands:
        return INF, min(v.neighbors)
    return _argmin((d, uid) for uid, d in cands.items())


def dist_not_connect(v: NeighborView) -> tuple[Dist, int]:
    """Distance to the nearest connected node and the neighbor realising it."""
    return _best(v, not_connected_candidates(v))


def dist_connect(v: NeighborView) -> tuple[Dist, int]:
    """Distance to the nearest connection point and the neighbor realising it."""
    return _best(v, connected_candidates(v))


def _candidates(v: NeighborView) -> dict[int, Dist]:
    return connected_candidates(v) if v.state.connected else not_connected_candidates(v)


def next_parent(v: NeighborView) -> tuple[Dist, int]:
    """The (dist, parent) pair DR1/DR2 would install; the current parent wins ties."""
    s = v.state
    cands = _candidates(v)
    best, uid = _best(v, cands)
    if s.parent in cands and cands[s.parent] == best:
        return best, s.parent
    return best, uid


def eval_better_path(v: NeighborView) -> bool:
    """dist differs from the best, or the current parent does not realise it."""
    s = v.state
    value, parent = next_parent(v)
    return s.dist != value or parent != s.parent and _candidates(v).get(s.parent, INF) != value


def eval_connect_stab(v: NeighborView) -> bool:
    s = v.state
    entry = v.neighbors.get(s.parent)
    if entry is None or not s.need or not entry[0].connected:
        return False
    return s.member or eval_asked_connection(v)


def connected_children(v: NeighborView) -> int:
    me = v.state.id
    return sum(1 for m, _ in v.neighbors.values() if m.parent == me and m.connected)


def connect_pt_target(v: NeighborView) -> bool:
    return v.state.member or connected_children(v) > 1


def eval_connect_pt_stab(v: NeighborView) -> bool:
    return v.state.connect_pt == connect_pt_target(v)


# -- rules -----------------------------------------------------------------------


def enabled_rules(v: NeighborView) -> list[RuleId]:
    """Every rule whose guard holds, in priority order.  A waiting node fires nothing."""
    s = v.state
    if s.waiting:
        return []
    if v.is_root:
        return [] if eval_croot(v) else [RuleId.RR]
    if not v.neighbors:
        return []
    cparent = eval_cparent(v)
    own_ok = parent_level_ok(v)
    better = eval_better_path(v)
    cstab = eval_connect_stab(v)
    asked = eval_asked_connection(v)
    parent_entry = v.neighbors.get(s.parent)
    parent_dist_inf = parent_entry is not None and parent_entry[0].dist == INF
    out = []
    # DR1 and CR3 look at the node's own level only: a child holding a stale
    # level must not block the repair or teardown that would correct it
    if (not s.connected and better) or not own_ok:
        out.append(RuleId.DR1)
    if s.connected and cstab and better and cparent and eval_connect_pt_stab(v):
        out.append(RuleId.DR2)
    if not s.need and not s.connected and not better and cparent and (s.member or asked):
        out.append(RuleId.NR1)
    if not s.connected and s.need and not s.member and not asked and not better and cparent:
        out.append(RuleId.NR2)
    if not s.connected and cstab and not better and cparent:
        out.append(RuleId.CR1)
    if s.connected and not cstab and cparent and not parent_dist_inf:
        out.append(RuleId.CR2)
    if s.connected and not cstab and own_ok and parent_dist_inf:
        out.append(RuleId.CR3)
    if s.connected and cstab and cparent and not eval_connect_pt_stab(v):
        out.append(RuleId.TR)
    return out


def _parent_level(v: NeighborView, parent: int) -> int:
    entry = v.neighbors.get(parent)
    return entry[0].level + 1 if entry is not None else 0


def apply_rule(v: NeighborView, r: RuleId, check: bool = True) -> NodeState:
    if check and r not in enabled_rules(v):
        raise ProtocolError(f"rule {r.name} is not enabled at node {v.id}")
    s = v.state
    if r is RuleId.RR:
        return replace(NodeState.canonical_root(s.id), member=s.member)
    if r is RuleId.DR1:
        d, p = next_parent(replace(v, state=replace(s, connected=False)))
        return replace(
            s, dist=d, parent=p, connected=False, connect_pt=False, level=_parent_level(v, p)
        )
    if r is RuleId.DR2:
        d, p = next_parent(v)
        return replace(s, dist=d, parent=p, level=_parent_level(v, p))
    if r is RuleId.NR1:
        return replace(s, need=True)
    if r is RuleId.NR2:
        return replace(s, need=False)
    if r is RuleId.CR1:
        return replace(s, connected=True)
    if r is RuleId.CR2:
        return replace(s, connected=False)
    if r is RuleId.CR3:
        return replace(s, connected=False, dist=INF, connect_pt=False, waiting=True)
    if r is RuleId.TR:
        return replace(s, connect_pt=connect_pt_target(v))
    raise ProtocolError(f"unknown rule {r!r}")


# two-pass cap per rule, doubled for safety
FIXPOINT_CAP = len(RuleId) * 4


def run_rules(v: NeighborView, max_steps: Optional[int] = None) -> tuple[NeighborView, list[tuple[RuleId, NodeState]]]:
    """Fire the lowest enabled rule until none is enabled, a firing is a no-op,
    the node starts waiting, or ``max_steps`` firings happened.

    Returns the new view and the ``(rule, state before)`` pairs that changed it.
    """
    fired = []
    limit = FIXPOINT_CAP if max_steps is None else max_steps
    for _ in range(limit):
        rules = enabled_rules(v)
        if not rules:
            return v, fired
        before = v.state
        after = apply_rule(v, rules[0], check=False)
        if after == before:
            return v, fired
        fired.append((rules[0], before))
        v = v.with_state(after)
    if max_steps is None:
        rules = enabled_rules(v)
        if rules and apply_rule(v, rules[0], check=False) != v.state:
            raise ProtocolError(
                f"node {v.id}: local fixpoint did not settle within {FIXPOINT_CAP} firings "
                f"({', '.join(r.name for r, _ in fired[-9:])})"
            )
    return v, fired


def update_copy(v: NeighborView, m: InfoMsg) -> Optional[NeighborView]:
    """Store ``m`` as the sender's copy; None if the sender is not a neighbor."""
    entry = v.neighbors.get(m.sender)
    if entry is None:
        return None
    if entry[0] == m:
        return v
    nbrs = dict(v.neighbors)
    nbrs[m.sender] = (m, entry[1])
    return replace(v, neighbors=nbrs)


def handle_info_msg(
    v: NeighborView, m: InfoMsg, max_steps: Optional[int] = None
) -> tuple[NeighborView, list[tuple[RuleId, NodeState]]]:
    """Receipt of ``m``: refresh the copy, then correct the local state.

    A message from a non-neighbor is discarded; the caller sees an unchanged
    view and no firings.
    """
    updated = update_copy(v, m)
    if updated is None:
        return v, []
    updated, fired = run_rules(updated, max_steps)
    return replace(updated, broadcast_due=True), fired


def _reset(s: NodeState, **extra) -> NodeState:
    return replace(s, connected=False, dist=INF, connect_pt=False, waiting=True, **extra)


def handle_interrupt(v: NeighborView, e: TopologyEvent, link_weight: Optional[Weight] = None) -> NeighborView:
    """Local effect of topology event ``e`` on node ``v``.

    ``link_weight`` is the weight of the new link when ``e`` adds a node
    adjacent to ``v``.
    """
    s = v.state
    nbrs = dict(v.neighbors)
    lost: Optional[int] = None
    if e.kind == DEL_MEMBER and e.node == s.id:
        return replace(v, state=_reset(s, member=False), broadcast_due=True)
    if e.kind == ADD_MEMBER and e.node == s.id:
        return replace(v, state=replace(s, member=True), broadcast_due=True)
    if e.kind == CRASH_EDGE and s.id in e.edge:
        lost = e.edge[0] if e.edge[1] == s.id else e.edge[1]
    elif e.kind == CRASH_NODE and e.node in nbrs:
        lost = e.node
    elif e.kind == ADD_EDGE and s.id in e.edge:
        other = e.edge[0] if e.edge[1] == s.id else e.edge[1]
        nbrs[other] = (InfoMsg.placeholder(other), e.weight)
        return replace(v, neighbors=nbrs)
    elif e.kind == ADD_NODE and link_weight is not None:
        nbrs[e.node] = (InfoMsg.placeholder(e.node), link_weight)
        return replace(v, neighbors=nbrs)
    if lost is None or lost not in nbrs:
        return v
    del nbrs[lost]
    v = replace(v, neighbors=nbrs)
    if s.parent == lost and not v.is_root:
        return replace(v, state=_reset(s), broadcast_due=True)
    return v


def release_wait(v: NeighborView) -> NeighborView:
    s = v.state
    if not s.waiting:
        return v
    if any(m.parent == s.id and m.connected for m, _ in v.neighbors.values()):
        return v
    return replace(v, state=replace(s, waiting=False))
