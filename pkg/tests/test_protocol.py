"""Maintenance-protocol tests on the eleven-peer reference overlay.

Every departure scenario below is frozen by hand from the reference tables in
test_overlay: for each substream the orphan promotions, slot claims and
redundant-edge re-points are spelled out edge by edge, and the label floods by
(pivot, delta).  The root-departure episode is traced end to end: repair,
secondary breaks, the seat request of the peer the breaks left shallow, the
induction move onto the root edge, the same-round chain split and break, and
the steady state all ten survivors end up in.
"""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treecast import (
    SERVER,
    EdgeKind,
    Overlay,
    StreamConfig,
    bootstrap_steady,
    canonical_labels,
    check_property1,
    check_property2,
    is_steady_state,
    measure_delay,
)
from treecast.overlay import (
    fork_balanced,
    refresh_control,
    refresh_records,
    subtree_sizes,
    tree_balanced,
)
from treecast.protocol import (
    PIPELINE_SLOTS,
    ChunkClock,
    ControlLabel,
    InsertPipeline,
    SecondaryBreak,
    SecondaryForm,
    StreamChunk,
    chain_splits,
    finish_flood,
    fire_induction,
    flood_hop,
    forward,
    handle_arrival,
    handle_departure,
    induced_balance_tick,
    pairing,
    request_ready,
    secondary_breaks,
    start_flood,
)

P, S, R = EdgeKind.TREE_PRIMARY, EdgeKind.TREE_SECONDARY, EdgeKind.REDUNDANT


def cfg11():
    return StreamConfig(n_initial=11, substreams=3, block_limit=3)


def drain_floods(ov, floods):
    """Run floods to completion in stamp order, then clear their marks."""
    for fl in sorted(floods, key=lambda f: f.stamp):
        while flood_hop(ov, fl):
            pass
        finish_flood(ov, fl)


def stored_labels(ov, i):
    return {pid: ov.peers[pid].views[i].label for pid in ov.peers}


def assert_labels_converged(ov):
    for i in range(ov.m):
        assert stored_labels(ov, i) == canonical_labels(ov, i), f"substream {i}"


def assert_p1_p2(ov):
    rep1, rep2 = check_property1(ov), check_property2(ov)
    assert rep1.ok, rep1.violations
    assert rep2.ok, rep2.violations


def end_round(ov, cfg):
    refresh_control(ov)
    refresh_records(ov, cfg)


# -- forwarding ---------------------------------------------------------------


def test_forward_messages_per_role():
    ov = bootstrap_steady(cfg11())
    # root fork: chunk to both children, split label to the primary child,
    # own control pair passed to the secondary child
    assert forward(ov, 1, 0) == [
        StreamChunk(0, 0, 1, 2),
        StreamChunk(0, 0, 1, 7),
        ControlLabel(0, 1, 2, 7, 7, True),
        ControlLabel(0, 1, 7, 12, SERVER, True),
    ]
    # chain node: pass-through
    assert forward(ov, 3, 0) == [
        StreamChunk(0, 0, 3, 4),
        ControlLabel(0, 3, 4, 5, 5, True),
    ]
    # backing leaf: the chunk rides the redundant edge, no control
    assert forward(ov, 4, 0) == [StreamChunk(0, 0, 4, 5)]
    # end node: the closing edge points at the server, nothing to send
    assert forward(ov, 11, 0) == []
    clock = ChunkClock.fresh(3)
    clock.tick()
    assert forward(ov, 4, 0, clock)[0].seq == 1


# -- label floods --------------------------------------------------------------


def test_flood_reaches_everyone_once():
    ov = bootstrap_steady(cfg11())
    before = stored_labels(ov, 0)
    fl = start_flood(ov, 0, 7, +1, 7, (0, 0, "join", 99))
    while flood_hop(ov, fl):
        pass
    assert fl.visited == set(ov.peers)
    after = stored_labels(ov, 0)
    assert after == {p: lab + 1 if lab >= 7 else lab for p, lab in before.items()}
    finish_flood(ov, fl)
    assert all(not ov.peers[p].views[0].applied_stamps for p in ov.peers)


# -- single departures ----------------------------------------------------------


def test_departure_of_backing_leaf():
    cfg = cfg11()
    ov = bootstrap_steady(cfg)
    out = handle_departure(ov, cfg, [4], stamp_round=1)
    assert out.reentries == [] and out.record_fallbacks == 0
    assert out.promoted == {(3, 1, 2)}
    assert {(f.substream, f.pivot, f.delta) for f in out.floods} == {
        (0, 4, -1),
        (1, 3, -1),
        (2, 2, -1),
    }
    # tree 1: the cycle predecessor of 5 re-points its redundant edge
    assert set(ov.edges(0)) == {
        (SERVER, 1, P),
        (1, 2, P), (1, 7, S),
        (2, 3, P), (2, 5, S),
        (3, 5, R),
        (5, 6, P), (6, 7, R),
        (7, 8, P), (7, 10, S),
        (8, 9, P), (9, 10, R),
        (10, 11, P), (11, SERVER, R),
    }
    # tree 2: peer 2 inherits the dead peer's chain slot by its records
    assert set(ov.edges(1)) == {
        (SERVER, 5, P),
        (5, 3, P), (5, 8, S),
        (3, 2, P), (3, 6, S),
        (2, 6, R),
        (6, 1, P), (1, 8, R),
        (8, 9, P), (8, 10, S),
        (9, 7, P), (7, 10, R),
        (10, 11, P), (11, SERVER, R),
    }
    # tree 3: peer 2 claims the chain slot, the orphaned secondary child's
    # backing leaf promotes into its tree parent
    assert set(ov.edges(2)) == {
        (SERVER, 6, P),
        (6, 2, P), (6, 9, S),
        (2, 3, P),
        (3, 1, P),
        (1, 5, P), (5, 9, R),
        (9, 7, P), (9, 10, S),
        (7, 8, P), (8, 10, R),
        (10, 11, P), (11, SERVER, R),
    }
    drain_floods(ov, out.floods)
    assert_labels_converged(ov)
    assert_p1_p2(ov)


def test_departure_of_interior_secondary():
    cfg = cfg11()
    ov = bootstrap_steady(cfg)
    out = handle_departure(ov, cfg, [5], stamp_round=1)
    assert out.reentries == [] and out.record_fallbacks == 0
    assert out.promoted == {(1, 8, 1)}
    assert {(f.substream, f.pivot, f.delta) for f in out.floods} == {
        (0, 5, -1),
        (1, 1, -1),
        (2, 6, -1),
    }
    # tree 1: 6 claims the secondary slot, its run's backing edge follows
    assert set(ov.edges(0)) == {
        (SERVER, 1, P),
        (1, 2, P), (1, 7, S),
        (2, 3, P), (2, 6, S),
        (3, 4, P), (4, 6, R),
        (6, 7, R),
        (7, 8, P), (7, 10, S),
        (8, 9, P), (9, 10, R),
        (10, 11, P), (11, SERVER, R),
    }
    # tree 2 lost its root: the primary child claims the root edge, the
    # orphaned secondary child's backing leaf promotes
    assert ov.server_children[1] == [3]
    assert set(ov.edges(1)) == {
        (SERVER, 3, P),
        (3, 4, P), (3, 6, S),
        (4, 2, P), (2, 6, R),
        (6, 1, P),
        (1, 8, P),
        (8, 9, P), (8, 10, S),
        (9, 7, P), (7, 10, R),
        (10, 11, P), (11, SERVER, R),
    }
    # tree 3: a plain leaf died; its cycle successor re-points upstream
    assert set(ov.edges(2)) == {
        (SERVER, 6, P),
        (6, 4, P), (6, 9, S),
        (4, 2, P), (4, 1, S),
        (2, 3, P), (3, 1, R),
        (1, 9, R),
        (9, 7, P), (9, 10, S),
        (7, 8, P), (8, 10, R),
        (10, 11, P), (11, SERVER, R),
    }
    drain_floods(ov, out.floods)
    assert_labels_converged(ov)
    assert_p1_p2(ov)


def test_departure_of_plain_leaf():
    cfg = cfg11()
    ov = bootstrap_steady(cfg)
    out = handle_departure(ov, cfg, [6], stamp_round=1)
    assert out.reentries == [] and out.record_fallbacks == 0
    assert out.promoted == {(5, 9, 2)}
    assert {(f.substream, f.pivot, f.delta) for f in out.floods} == {
        (0, 6, -1),
        (1, 5, -1),
        (2, 1, -1),
    }
    assert set(ov.edges(0)) == {
        (SERVER, 1, P),
        (1, 2, P), (1, 7, S),
        (2, 3, P), (2, 5, S),
        (3, 4, P), (4, 5, R),
        (5, 7, R),
        (7, 8, P), (7, 10, S),
        (8, 9, P), (9, 10, R),
        (10, 11, P), (11, SERVER, R),
    }
    assert set(ov.edges(1)) == {
        (SERVER, 5, P),
        (5, 3, P), (5, 8, S),
        (3, 4, P), (3, 1, S),
        (4, 2, P), (2, 1, R),
        (1, 8, R),
        (8, 9, P), (8, 10, S),
        (9, 7, P), (7, 10, R),
        (10, 11, P), (11, SERVER, R),
    }
    assert ov.server_children[2] == [4]
    assert set(ov.edges(2)) == {
        (SERVER, 4, P),
        (4, 2, P), (4, 1, S),
        (2, 3, P), (3, 1, R),
        (1, 5, P),
        (5, 9, P),
        (9, 7, P), (9, 10, S),
        (7, 8, P), (8, 10, R),
        (10, 11, P), (11, SERVER, R),
    }
    drain_floods(ov, out.floods)
    assert_labels_converged(ov)
    assert_p1_p2(ov)


def test_request_guard_tracks_fork_balance():
    cfg = cfg11()
    ov = bootstrap_steady(cfg)
    out = handle_departure(ov, cfg, [5], stamp_round=1)
    drain_floods(ov, out.floods)
    # fork 2 went lopsided in tree 1: its children may not request a seat
    assert not fork_balanced(ov, 0, 2)
    assert request_ready(ov, cfg, 3, 0) is None
    assert request_ready(ov, cfg, 6, 0) is None
    # fork 7 kept its median: its primary child may
    assert request_ready(ov, cfg, 8, 0) == 10


# -- block departures -----------------------------------------------------------


def test_block_departure_consumes_full_record_list():
    # three cycle-consecutive peers leave in every tree at once: the leading
    # dead run exactly exhausts the three-deep record lists, whose last entry
    # still names the attach point.  Strict mode proves no fallback was used.
    cfg = cfg11()
    ov = bootstrap_steady(cfg)
    out = handle_departure(ov, cfg, [2, 3, 4], stamp_round=1, strict_records=True)
    assert out.reentries == [] and out.record_fallbacks == 0
    assert out.promoted == set()
    floods = {(f.substream, f.pivot, f.delta) for f in out.floods}
    assert floods == {(0, 2, -3), (1, 2, -3), (2, 2, -3)}
    assert set(ov.edges(0)) == {
        (SERVER, 1, P),
        (1, 5, P), (1, 7, S),
        (5, 6, P), (6, 7, R),
        (7, 8, P), (7, 10, S),
        (8, 9, P), (9, 10, R),
        (10, 11, P), (11, SERVER, R),
    }
    assert set(ov.edges(1)) == {
        (SERVER, 5, P),
        (5, 6, P), (5, 8, S),
        (6, 1, P), (1, 8, R),
        (8, 9, P), (8, 10, S),
        (9, 7, P), (7, 10, R),
        (10, 11, P), (11, SERVER, R),
    }
    assert set(ov.edges(2)) == {
        (SERVER, 6, P),
        (6, 1, P), (6, 9, S),
        (1, 5, P), (5, 9, R),
        (9, 7, P), (9, 10, S),
        (7, 8, P), (8, 10, R),
        (10, 11, P), (11, SERVER, R),
    }
    drain_floods(ov, out.floods)
    assert_labels_converged(ov)
    assert_p1_p2(ov)


def test_wiped_records_force_reentry():
    # a peer whose record list was lost cannot prove its attach point under
    # strict records: it is evicted and the repair restarts around it
    cfg = StreamConfig(n_initial=8, substreams=2, block_limit=3)
    ov = bootstrap_steady(cfg)
    ov.peers[3].views[0].records = []
    out = handle_departure(ov, cfg, [2], stamp_round=1, strict_records=True)
    assert out.reentries == [3]
    assert 3 not in ov.peers and ov.n == 6
    # both floods cover the final two-peer run in departure coordinates
    assert {(f.substream, f.pivot, f.delta) for f in out.floods} == {
        (0, 2, -2),
        (1, 2, -2),
    }
    v4 = ov.peers[4].views[0]
    assert ov.peers[1].views[0].child_primary == 4
    assert v4.parent_tree == 1 and v4.parent_red is None and v4.child_red == 5
    drain_floods(ov, out.floods)
    assert_labels_converged(ov)
    assert_p1_p2(ov)


# -- the root-departure episode ---------------------------------------------------


def test_departed_root_episode_heals_to_steady():
    cfg = cfg11()
    ov = bootstrap_steady(cfg)

    # round r: the root of tree 1 leaves; every tree repairs in place
    out = handle_departure(ov, cfg, [1], stamp_round=5)
    assert out.reentries == []
    assert out.promoted == {(6, 7, 0)}
    assert ov.server_children[0] == [2]
    assert set(ov.edges(0)) == {
        (SERVER, 2, P),
        (2, 3, P), (2, 5, S),
        (3, 4, P), (4, 5, R),
        (5, 6, P),
        (6, 7, P),
        (7, 8, P), (7, 10, S),
        (8, 9, P), (9, 10, R),
        (10, 11, P), (11, SERVER, R),
    }
    assert ov.peers[8].views[1].parent_red == 6  # re-pointed in tree 2
    assert ov.peers[5].views[2].parent_tree == 4  # slot claim in tree 3
    assert ov.peers[5].views[2].parent_red == 3
    drain_floods(ov, out.floods)
    assert_labels_converged(ov)
    assert_p1_p2(ov)

    # same round: the forks the repairs left shallow break their secondaries
    assert chain_splits(ov, cfg, 0) == []
    ops1, prom1 = secondary_breaks(ov, cfg, 1)
    assert ops1 == [SecondaryBreak(1, 3, 6)] and prom1 == {(2, 6, 1)}
    ops2, prom2 = secondary_breaks(ov, cfg, 2)
    assert ops2 == [SecondaryBreak(2, 4, 5)] and prom2 == {(3, 5, 2)}
    assert tree_balanced(ov, 1, cfg) and tree_balanced(ov, 2, cfg)
    assert not tree_balanced(ov, 0, cfg)  # fork 2's median is still off
    end_round(ov, cfg)

    # the breaks left exactly these peers shallow enough to request a seat
    ready = {
        (v, i)
        for v in ov.peers
        for i in range(3)
        if request_ready(ov, cfg, v, i) is not None
    }
    assert ready == {(8, 0), (3, 1), (9, 1), (4, 2), (7, 2)}
    assert request_ready(ov, cfg, 4, 2) == 9
    assert pairing(ov, cfg, 8, 0) == (3, S, 1)
    assert pairing(ov, cfg, 3, 1) == (SERVER, P, 2)
    assert pairing(ov, cfg, 9, 1) == (3, S, 2)
    assert pairing(ov, cfg, 4, 2) == (SERVER, P, 0)
    assert pairing(ov, cfg, 7, 2) == (4, S, 0)

    # r+4: the pipelines fire in request order; balanced target trees refuse,
    # the proposal onto the broken tree's root edge is accepted, and the
    # second proposal aimed at the same tree finds it already claimed
    touched = set()
    pipes = [(8, 0), (3, 1), (9, 1), (4, 2), (7, 2)]
    results = {}
    for v, i in pipes:
        pipe = InsertPipeline(v, i, 5, 5 + PIPELINE_SLOTS - 1, 0)
        results[(v, i)] = fire_induction(ov, cfg, pipe, stamp_round=9, trees_touched=touched)
    assert results[(8, 0)].status == "refused"
    assert results[(3, 1)].status == "refused"
    assert results[(9, 1)].status == "refused"
    assert results[(4, 2)].status == "accepted"
    assert results[(4, 2)].moved_to == (0, SERVER, "primary")
    assert results[(7, 2)].status == "abandoned"
    assert touched == {0}
    drain_floods(ov, results[(4, 2)].floods)
    assert_labels_converged(ov)

    # same round, after the insert: the overlong root chain forks at its
    # median, then the starved fork below breaks
    assert chain_splits(ov, cfg, 0) == [SecondaryForm(0, 4, 7)]
    ops0, prom0 = secondary_breaks(ov, cfg, 0)
    assert ops0 == [SecondaryBreak(0, 2, 5)] and prom0 == {(3, 5, 0)}
    end_round(ov, cfg)

    assert set(ov.edges(0)) == {
        (SERVER, 4, P),
        (4, 2, P), (4, 7, S),
        (2, 3, P), (3, 5, P), (5, 6, P), (6, 7, R),
        (7, 8, P), (7, 10, S),
        (8, 9, P), (9, 10, R),
        (10, 11, P), (11, SERVER, R),
    }
    assert set(ov.edges(1)) == {
        (SERVER, 5, P),
        (5, 3, P), (5, 8, S),
        (3, 4, P), (4, 2, P), (2, 6, P), (6, 8, R),
        (8, 9, P), (8, 10, S),
        (9, 7, P), (7, 10, R),
        (10, 11, P), (11, SERVER, R),
    }
    assert set(ov.edges(2)) == {
        (SERVER, 6, P),
        (6, 4, P), (6, 9, S),
        (4, 2, P), (2, 3, P), (3, 5, P), (5, 9, R),
        (9, 7, P), (9, 10, S),
        (7, 8, P), (8, 10, R),
        (10, 11, P), (11, SERVER, R),
    }
    assert canonical_labels(ov, 0) == {
        4: 1, 2: 2, 3: 3, 5: 4, 6: 5, 7: 6, 8: 7, 9: 8, 10: 9, 11: 10,
    }
    assert_labels_converged(ov)
    for i in range(3):
        assert tree_balanced(ov, i, cfg)
    assert is_steady_state(ov, cfg)
    assert measure_delay(ov).overall == 5  # one chain now holds four peers

    # and the machinery is quiescent from here on
    key = ov.structure_key()
    for i in range(3):
        assert chain_splits(ov, cfg, i) == []
        assert secondary_breaks(ov, cfg, i) == ([], set())
    assert induced_balance_tick(ov, cfg) == ([], set())
    assert ov.structure_key() == key


# -- arrivals ---------------------------------------------------------------------


def test_arrival_walks_leaf_chain_and_fork_cases():
    cfg = cfg11()
    ov = bootstrap_steady(cfg)
    out = handle_arrival(ov, cfg, 12, contact=6, stamp_round=2)
    assert out.retries == 0 and out.forced_root == 0
    assert ov.n == 12
    assert {(f.substream, f.pivot, f.delta) for f in out.floods} == {
        (0, 7, 1),
        (1, 6, 1),
        (2, 5, 1),
    }
    # tree 1: the contact is a leaf there, the newcomer adopts below it
    v0 = ov.peers[12].views[0]
    assert ov.peers[6].views[0].child_primary == 12
    assert v0.parent_tree == 6 and v0.child_red == 7 and v0.label == 7
    assert ov.peers[7].views[0].parent_red == 12
    # tree 2: degree-one contact, the newcomer splices above its child
    v1 = ov.peers[12].views[1]
    assert ov.peers[6].views[1].child_primary == 12
    assert v1.parent_tree == 6 and v1.child_primary == 1 and v1.label == 6
    assert ov.peers[1].views[1].parent_tree == 12
    # tree 3: the contact forks, so the newcomer goes above the child it
    # acquired in the previous tree, taking over its backing edge
    v2 = ov.peers[12].views[2]
    assert ov.peers[4].views[2].child_secondary == 12
    assert v2.parent_tree == 4 and v2.child_primary == 1 and v2.label == 5
    assert v2.parent_red == 3 and ov.peers[3].views[2].child_red == 12
    assert ov.peers[1].views[2].parent_tree == 12
    assert ov.peers[1].views[2].parent_red is None
    drain_floods(ov, out.floods)
    assert_labels_converged(ov)
    assert_p1_p2(ov)


def test_arrival_into_tiny_overlays():
    cfg = StreamConfig(n_initial=0, substreams=2)
    ov = bootstrap_steady(cfg)
    ov.add_peer(1)
    handle_arrival(ov, cfg, 1, contact=None, stamp_round=0)
    for i in range(2):
        assert ov.server_children[i] == [1]
        assert ov.peers[1].views[i].child_red == SERVER
    out = handle_arrival(ov, cfg, 2, contact=1, stamp_round=1)
    drain_floods(ov, out.floods)
    assert ov.n == 2
    assert_labels_converged(ov)
    assert_p1_p2(ov)
    out = handle_arrival(ov, cfg, 3, contact=2, stamp_round=2)
    drain_floods(ov, out.floods)
    assert_labels_converged(ov)
    assert_p1_p2(ov)


# -- steady-state induction is a fixed point ----------------------------------------


def test_steady_requests_resolve_to_own_seat():
    cfg = cfg11()
    ov = bootstrap_steady(cfg)
    ready = {
        (v, i)
        for v in ov.peers
        for i in range(3)
        if request_ready(ov, cfg, v, i) is not None
    }
    # one requester per fork side that is not a fork itself nor spans the tail
    assert ready == {
        (3, 0), (5, 0), (8, 0),
        (4, 1), (6, 1), (9, 1),
        (2, 2), (1, 2), (7, 2),
    }
    assert pairing(ov, cfg, 3, 0) == (5, P, 1)
    assert pairing(ov, cfg, 5, 0) == (SERVER, P, 1)
    assert pairing(ov, cfg, 8, 0) == (5, S, 1)
    key = ov.structure_key()
    for v, i in sorted(ready):
        pipe = InsertPipeline(v, i, 0, PIPELINE_SLOTS - 1, 0)
        res = fire_induction(ov, cfg, pipe, stamp_round=4, trees_touched=set())
        assert res.status == "noop", (v, i, res.status)
    assert ov.structure_key() == key


@settings(max_examples=40, deadline=None)
@given(n=st.integers(3, 44), m=st.integers(2, 4))
def test_steady_machinery_is_quiescent(n, m):
    cfg = StreamConfig(n_initial=n, substreams=m)
    ov = bootstrap_steady(cfg)
    key = ov.structure_key()
    for i in range(m):
        assert chain_splits(ov, cfg, i) == []
        assert secondary_breaks(ov, cfg, i) == ([], set())
    for _ in range(cfg.balance_threshold + 2):
        assert induced_balance_tick(ov, cfg) == ([], set())
    for v in sorted(ov.peers):
        for i in range(m):
            if request_ready(ov, cfg, v, i) is None:
                continue
            pipe = InsertPipeline(v, i, 0, PIPELINE_SLOTS - 1, 0)
            res = fire_induction(ov, cfg, pipe, stamp_round=1, trees_touched=set())
            assert res.status != "accepted"
    assert ov.structure_key() == key


# -- first-tree active balance -------------------------------------------------------


def _off_median_overlay():
    """Eight peers, m=2.  Tree 1 forks at the root with four peers on the
    primary side and three on the secondary: the median (position 5) sits one
    step below the fork's secondary child.  Tree 2 is a plain chain."""
    ov = Overlay(2)
    for pid in range(1, 9):
        ov.add_peer(pid)
    ov.server_children[0] = [1]
    chain0 = {1: 2, 2: 3, 3: 4, 4: 5, 6: 7, 7: 8}
    v1 = ov.peers[1].views[0]
    v1.parent_tree = SERVER
    v1.child_secondary = 6
    ov.peers[6].views[0].parent_tree = 1
    for a, b in chain0.items():
        ov.peers[a].views[0].child_primary = b
        ov.peers[b].views[0].parent_tree = a
    ov.peers[5].views[0].child_red = 6
    ov.peers[6].views[0].parent_red = 5
    ov.peers[8].views[0].child_red = SERVER
    for lab, pid in enumerate([1, 2, 3, 4, 5, 6, 7, 8], start=1):
        ov.peers[pid].views[0].label = lab
    ov.server_children[1] = [1]
    ov.peers[1].views[1].parent_tree = SERVER
    for a in range(1, 8):
        ov.peers[a].views[1].child_primary = a + 1
        ov.peers[a + 1].views[1].parent_tree = a
    ov.peers[8].views[1].child_red = SERVER
    for pid in range(1, 9):
        ov.peers[pid].views[1].label = pid
    refresh_control(ov)
    return ov


def test_off_median_fork_rebinds_after_threshold():
    ov = _off_median_overlay()
    cfg = StreamConfig(n_initial=8, substreams=2)
    assert not fork_balanced(ov, 0, 1)
    before = canonical_labels(ov, 0)
    assert cfg.balance_threshold == 10
    for _ in range(cfg.balance_threshold - 1):
        assert induced_balance_tick(ov, cfg) == ([], set())
    assert ov.peers[1].views[0].balance_timer == cfg.balance_threshold - 1
    ops, promoted = induced_balance_tick(ov, cfg)
    # break the old secondary edge (promoting its backing leaf), then demote
    # the chain edge above the median into the new backing
    assert ops == [SecondaryBreak(0, 1, 6), SecondaryForm(0, 1, 5)]
    assert promoted == {(5, 6, 0)}
    v5 = ov.peers[5].views[0]
    assert v5.parent_tree == 1 and v5.parent_red == 4 and v5.child_primary == 6
    assert ov.peers[4].views[0].child_red == 5
    assert ov.peers[4].views[0].child_primary is None
    assert ov.peers[1].views[0].child_secondary == 5
    assert ov.peers[6].views[0].parent_tree == 5
    assert ov.peers[6].views[0].parent_red is None
    # reclassifications never move a label
    assert canonical_labels(ov, 0) == before
    assert fork_balanced(ov, 0, 1)
    assert_p1_p2(ov)
    assert induced_balance_tick(ov, cfg) == ([], set())


# -- churn properties -----------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(data=st.data())
def test_single_departures_keep_properties(data):
    cfg = cfg11()
    ov = bootstrap_steady(cfg)
    for r in range(3):
        gone = data.draw(st.sampled_from(sorted(ov.peers)), label=f"departure {r}")
        out = handle_departure(ov, cfg, [gone], stamp_round=r, strict_records=True)
        assert out.reentries == []
        drain_floods(ov, out.floods)
        for i in range(3):
            chain_splits(ov, cfg, i)
            secondary_breaks(ov, cfg, i)
        assert_p1_p2(ov)
        assert_labels_converged(ov)
        end_round(ov, cfg)


@settings(max_examples=60, deadline=None)
@given(
    block=st.lists(st.integers(1, 11), unique=True, min_size=1, max_size=3),
)
def test_block_departures_within_memory_budget(block):
    cfg = cfg11()
    ov = bootstrap_steady(cfg)
    out = handle_departure(ov, cfg, block, stamp_round=1, strict_records=True)
    assert out.reentries == [] and out.record_fallbacks == 0
    drain_floods(ov, out.floods)
    assert ov.n == 11 - len(block)
    assert_p1_p2(ov)
    assert_labels_converged(ov)
