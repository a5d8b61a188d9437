from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from steinerstab import protocol as P
from steinerstab.graph import ADD_EDGE, CRASH_EDGE, DEL_MEMBER, TopologyEvent
from steinerstab.protocol import INF, InfoMsg, NeighborView, NodeState, RuleId

ROOT = NodeState.canonical_root(1)


def msg(sender, parent=None, level=0, dist=INF, need=False, connected=False, connect_pt=False):
    return InfoMsg(sender, sender if parent is None else parent, level, dist, need, connected, connect_pt)


def view(state, *copies, weights=None, is_root=False, cap=None):
    weights = weights or {}
    nbrs = {m.sender: (m, weights.get(m.sender, 1)) for m in copies}
    return NeighborView(state=state, neighbors=nbrs, is_root=is_root, level_cap=cap)


def node(id, parent, level, dist, member=False, need=False, connected=False, connect_pt=False, waiting=False):
    return NodeState(id, parent, level, dist, member, need, connected, connect_pt, waiting)


ROOT_MSG = P.make_info_msg(ROOT)


# -- predicates --------------------------------------------------------------------


def test_croot_canonical_root():
    assert P.eval_croot(view(ROOT, is_root=True))


@pytest.mark.parametrize("change", [{"level": 3}, {"connect_pt": False}, {"dist": 1}, {"parent": 2}])
def test_croot_rejects_corruption(change):
    assert not P.eval_croot(view(replace(ROOT, **change), is_root=True))


def test_cparent_level_chain():
    v = view(node(5, 2, 3, 4), msg(2, parent=1, level=2))
    assert P.eval_cparent(v)


def test_cparent_parent_gone():
    assert not P.eval_cparent(view(node(5, 9, 3, 4), msg(2, level=2)))


def test_cparent_two_cycle_fails_at_both_ends():
    a = node(1, 2, 1, 5)
    b = node(2, 1, 2, 5)
    assert not P.eval_cparent(view(a, P.make_info_msg(b)))
    assert not P.eval_cparent(view(b, P.make_info_msg(a)))


def test_asked_connection():
    me = node(5, 1, 1, 1)
    assert P.eval_asked_connection(view(me, msg(2, parent=5, need=True)))
    assert not P.eval_asked_connection(view(me, msg(2, parent=5, need=False)))
    assert not P.eval_asked_connection(view(me, msg(2, parent=3, need=True)))


def test_dist_not_connect_reference_node_2():
    # node 2 of the reference graph: root 1 connected at weight 1, node 4 unreached
    v = view(node(2, 2, 0, INF), ROOT_MSG, msg(4, parent=1), weights={1: 1, 4: 2})
    assert P.dist_not_connect(v) == (1, 1)


def test_dist_not_connect_reference_node_4():
    v = view(
        node(4, 4, 0, INF, member=True),
        msg(2, parent=1, level=1, dist=1),
        msg(3, parent=1, level=1, dist=4),
        weights={2: 2, 3: 1},
    )
    assert P.dist_not_connect(v) == (3, 2)


def test_dist_not_connect_tie_breaks_on_smallest_id():
    v = view(node(1, 1, 0, INF), msg(7, connected=True), msg(5, connected=True), weights={5: 2, 7: 2})
    assert P.dist_not_connect(v) == (2, 5)


def test_dist_not_connect_all_infinite():
    v = view(node(1, 1, 0, INF), msg(7), msg(5))
    assert P.dist_not_connect(v) == (INF, 5)


def test_dist_not_connect_skips_own_unconnected_children():
    v = view(node(1, 2, 1, INF), msg(2, parent=1, dist=1), msg(3, dist=9), weights={2: 1, 3: 1})
    assert P.dist_not_connect(v) == (10, 3)


def _connected_me(parent=2, level=5):
    return node(9, parent, level, 4, member=True, need=True, connected=True, connect_pt=True)


def test_dist_connect_prefers_connection_point():
    u = msg(2, parent=1, level=1, dist=3, need=True, connected=True, connect_pt=True)
    x = msg(3, parent=1, level=1, dist=1, need=True, connected=True)
    v = view(_connected_me(parent=3), u, x, weights={2: 2, 3: 2})
    assert P.dist_connect(v) == (2, 2)


def test_dist_connect_single_connection_point():
    u = msg(4, parent=1, level=1, dist=0, need=True, connected=True, connect_pt=True)
    assert P.dist_connect(view(_connected_me(parent=4), u, weights={4: 5})) == (5, 4)


def test_dist_connect_nothing_connected():
    v = view(_connected_me(), msg(4), msg(3))
    assert P.dist_connect(v) == (INF, 3)


def test_dist_connect_ignores_children_higher_levels_and_detached_relays():
    cp = dict(need=True, connected=True, connect_pt=True)
    child = msg(2, parent=9, level=6, dist=0, **cp)
    higher = msg(3, parent=1, level=7, dist=0, **cp)
    relay = msg(4, parent=1, level=1, dist=0, need=True, connected=True)
    unconnected = msg(5, parent=1, level=1, dist=0)
    good = msg(6, parent=1, level=1, dist=0, **cp)
    weights = {2: 1, 3: 1, 4: 1, 5: 1, 6: 8}
    v = view(_connected_me(parent=6), child, higher, relay, unconnected, good, weights=weights)
    assert P.dist_connect(v) == (8, 6)


def test_better_path_examples():
    assert P.eval_better_path(view(node(1, 2, 1, 7), msg(2, connected=True), weights={2: 3}))
    cp = msg(2, parent=1, level=1, dist=0, need=True, connected=True, connect_pt=True)
    settled = node(3, 2, 2, 4, member=True, need=True, connected=True, connect_pt=True)
    assert not P.eval_better_path(view(settled, cp, weights={2: 4}))


def test_better_path_false_for_settled_reference_node_4():
    v = view(
        node(4, 2, 2, 3, member=True),
        msg(2, parent=1, level=1, dist=1),
        msg(3, parent=1, level=1, dist=4),
        weights={2: 2, 3: 1},
    )
    assert not P.eval_better_path(v)


def test_connect_stab_examples():
    parent = msg(2, parent=1, level=1, dist=0, need=True, connected=True, connect_pt=True)
    assert P.eval_connect_stab(view(node(3, 2, 2, 1, member=True, need=True), parent))
    assert not P.eval_connect_stab(view(node(3, 2, 2, 1, need=True), parent))
    relay = view(node(3, 2, 2, 1, need=True), parent, msg(4, parent=3, level=3, need=True))
    assert P.eval_connect_stab(relay)


def test_connect_pt_stab_examples():
    assert P.eval_connect_pt_stab(view(node(3, 2, 2, 1, member=True, connect_pt=True)))
    kids = [msg(k, parent=3, level=3, connected=True) for k in (4, 5)]
    assert P.eval_connect_pt_stab(view(node(3, 2, 2, 1, connected=True, connect_pt=True), *kids))
    assert not P.eval_connect_pt_stab(view(node(3, 2, 2, 1, connected=True, connect_pt=True), kids[0]))


# -- rules ------------------------------------------------------------------------


def test_corrupted_root_enables_rr_only():
    assert P.enabled_rules(view(replace(ROOT, level=9), is_root=True)) == [RuleId.RR]


def test_unconnected_with_better_path_starts_with_dr1():
    v = view(node(3, 3, 0, INF), ROOT_MSG, weights={1: 2})
    assert P.enabled_rules(v)[0] is RuleId.DR1


def test_stabilized_member_leaf_is_quiet():
    v = view(node(2, 1, 1, 1, member=True, need=True, connected=True, connect_pt=True), ROOT_MSG)
    assert P.enabled_rules(v) == []


def test_rr_restores_root():
    v = view(replace(ROOT, level=9, dist=4, need=False), is_root=True)
    after = P.apply_rule(v, RuleId.RR)
    assert after == ROOT
    assert P.eval_croot(v.with_state(after))


def test_cr3_on_dead_parent():
    parent = msg(2, parent=1, level=1, dist=INF, need=True)
    v = view(node(3, 2, 2, 1, member=True, need=True, connected=True, connect_pt=True), parent)
    assert P.enabled_rules(v) == [RuleId.CR3]
    after = P.apply_rule(v, RuleId.CR3)
    assert after.waiting and after.dist == INF and not after.connected and not after.connect_pt


def test_tr_marks_branching_relay():
    parent = msg(2, parent=1, level=1, dist=0, need=True, connected=True, connect_pt=True)
    kids = [msg(k, parent=3, level=3, need=True, connected=True) for k in (4, 5)]
    v = view(node(3, 2, 2, 1, need=True, connected=True), parent, *kids)
    assert RuleId.TR in P.enabled_rules(v)
    assert P.apply_rule(v, RuleId.TR).connect_pt


def test_apply_rule_outside_guard_raises():
    with pytest.raises(P.ProtocolError):
        P.apply_rule(view(ROOT, is_root=True), RuleId.CR1)


# -- handlers ---------------------------------------------------------------------


def test_same_message_leaves_settled_node_alone():
    v = view(node(2, 1, 1, 1, member=True, need=True, connected=True, connect_pt=True), ROOT_MSG)
    new, fired = P.handle_info_msg(v, ROOT_MSG)
    assert fired == [] and new.state == v.state and new.neighbors == v.neighbors


def test_two_node_handshake_connects():
    waiting_for_root = replace(ROOT_MSG, connected=False)
    v = view(node(2, 1, 1, 1, member=True, need=True), waiting_for_root)
    new, fired = P.handle_info_msg(v, ROOT_MSG)
    assert [r for r, _ in fired][0] is RuleId.CR1
    assert new.state.connected and new.broadcast_due


def test_parent_dist_infinite_triggers_cr3():
    parent = msg(2, parent=1, level=1, dist=1, need=True, connected=True)
    v = view(node(3, 2, 2, 2, member=True, need=True, connected=True, connect_pt=True), parent)
    new, fired = P.handle_info_msg(v, replace(parent, dist=INF, connected=False))
    assert RuleId.CR3 in [r for r, _ in fired]
    assert new.state.waiting


def test_message_from_stranger_is_dropped():
    v = view(node(2, 1, 1, 1, member=True, need=True, connected=True, connect_pt=True), ROOT_MSG)
    new, fired = P.handle_info_msg(v, msg(7))
    assert new is v and fired == []


def test_interrupt_del_member():
    v = view(node(2, 1, 1, 1, member=True, need=True, connected=True, connect_pt=True), ROOT_MSG)
    new = P.handle_interrupt(v, TopologyEvent(DEL_MEMBER, node=2))
    s = new.state
    assert (s.connected, s.dist, s.connect_pt, s.waiting, s.member) == (False, INF, False, True, False)


def test_interrupt_non_parent_edge_only_shrinks_neighbors():
    v = view(node(2, 1, 1, 1, member=True, need=True, connected=True, connect_pt=True), ROOT_MSG, msg(3))
    new = P.handle_interrupt(v, TopologyEvent(CRASH_EDGE, edge=(2, 3)))
    assert new.state == v.state and set(new.neighbors) == {1}


def test_interrupt_add_edge_grows_neighbors():
    v = view(node(2, 1, 1, 1, member=True, need=True, connected=True, connect_pt=True), ROOT_MSG)
    new = P.handle_interrupt(v, TopologyEvent(ADD_EDGE, edge=(2, 5), weight=3))
    assert new.state == v.state and new.neighbors[5][1] == 3


def test_release_wait_examples():
    w = node(2, 1, 1, INF, waiting=True)
    assert P.release_wait(view(w, msg(3, parent=2, connected=True))).state.waiting
    assert not P.release_wait(view(w, ROOT_MSG)).state.waiting
    assert not P.release_wait(view(w, msg(3, parent=2, connected=False))).state.waiting


def test_info_msg_projection():
    m = P.make_info_msg(ROOT)
    assert (m.dist, m.level) == (0, 0)
    w = P.make_info_msg(node(4, 2, 3, INF, member=True, waiting=True))
    assert w.dist == INF and not w.connected
    assert not hasattr(m, "member")


# -- properties -------------------------------------------------------------------

dists = st.one_of(st.just(INF), st.integers(0, 20))


@st.composite
def copies(draw, sender, ids):
    return InfoMsg(
        sender,
        draw(st.sampled_from(ids)),
        draw(st.integers(0, 12)),
        draw(dists),
        draw(st.booleans()),
        draw(st.booleans()),
        draw(st.booleans()),
    )


@st.composite
def views(draw):
    k = draw(st.integers(1, 5))
    ids = list(range(0, k + 1))
    waiting = draw(st.booleans()) and draw(st.booleans())
    connected = draw(st.booleans()) and not waiting
    s = NodeState(
        0,
        draw(st.sampled_from(ids)),
        draw(st.integers(0, 12)),
        INF if waiting else draw(dists),
        draw(st.booleans()),
        draw(st.booleans()),
        connected,
        draw(st.booleans()) and not waiting,
        waiting,
    )
    nbrs = {u: (draw(copies(u, ids)), draw(st.integers(1, 6))) for u in ids[1:]}
    cap = draw(st.sampled_from([None, 8, 13]))
    return NeighborView(state=s, neighbors=nbrs, is_root=draw(st.booleans()), level_cap=cap)


@given(views())
def test_rules_are_pure(v):
    for r in P.enabled_rules(v):
        assert P.apply_rule(v, r) == P.apply_rule(v, r)


@given(views())
def test_rr_yields_croot(v):
    if RuleId.RR in P.enabled_rules(v):
        assert P.eval_croot(v.with_state(P.apply_rule(v, RuleId.RR)))


@given(views())
def test_tr_yields_connect_pt_stab(v):
    if RuleId.TR in P.enabled_rules(v):
        assert P.eval_connect_pt_stab(v.with_state(P.apply_rule(v, RuleId.TR)))


@given(views())
def test_need_and_connection_rules_exclusive(v):
    rules = set(P.enabled_rules(v))
    assert len(rules & {RuleId.NR1, RuleId.NR2}) <= 1
    assert len(rules & {RuleId.CR1, RuleId.CR2, RuleId.CR3}) <= 1


@given(views())
def test_enabled_rules_sorted_by_priority(v):
    rules = P.enabled_rules(v)
    assert rules == sorted(rules)


@given(views())
def test_distance_functions_are_minima(v):
    me = v.state.id
    # every eligible term, enumerated independently of the candidate builders
    terms = []
    for uid, (m, w) in v.neighbors.items():
        if m.parent == me and not m.connected:
            continue
        if v.level_cap is not None and m.level + 1 >= v.level_cap:
            continue
        terms.append((w if m.connected else m.dist + w, uid))
    value, uid = P.dist_not_connect(v)
    if terms:
        assert value == min(t for t, _ in terms)
        assert (value, uid) in terms
        assert uid == min(u for t, u in terms if t == value)
    else:
        assert (value, uid) == (INF, min(v.neighbors))
    dc, _ = P.dist_connect(v)
    for uid, (m, w) in v.neighbors.items():
        eligible = (
            m.connected
            and m.parent != me
            and m.level < v.state.level
            and (v.level_cap is None or m.level + 1 < v.level_cap)
            and (m.connect_pt or uid == v.state.parent)
        )
        if eligible:
            assert dc <= (w if m.connect_pt else m.dist + w)


@given(views())
def test_local_fixpoint_settles_within_cap(v):
    new, fired = P.run_rules(v)
    assert len(fired) <= P.FIXPOINT_CAP
    if not new.state.waiting:
        assert not P.enabled_rules(new) or P.apply_rule(new, P.enabled_rules(new)[0], check=False) == new.state


@given(views())
def test_rules_keep_waiting_invariant_and_member(v):
    new, _ = P.run_rules(v)
    s = new.state
    assert s.member == v.state.member
    if s.waiting:
        assert not s.connected and s.dist == INF


@given(views())
def test_repaired_parent_is_a_neighbor(v):
    new, fired = P.run_rules(v)
    if any(r in (RuleId.DR1, RuleId.DR2) for r, _ in fired):
        assert new.state.parent in v.neighbors


def test_teardown_not_blocked_by_stale_child_level():
    # waiting parent 1 still points back at 4 with a level that breaks the chain
    parent = msg(1, parent=4, level=3, dist=INF, need=True)
    v = view(node(4, 1, 4, 2, member=True, need=True, connected=True, connect_pt=True), parent, cap=5)
    assert not P.eval_cparent(v)
    assert P.enabled_rules(v) == [RuleId.CR3]
