"""Per-round maintenance protocol over the overlay views.

Everything here is phrased as deterministic surgery on the global overlay;
the simulator sequences it into rounds.  Label arithmetic (pivots, medians,
spans) is evaluated against the tracker's authoritative canonical labels,
while the per-peer stored labels follow via the label-update floods — stored
labels are only protocol surface, never an input to a topology decision.

Almost every operation is a reclassification of cycle edges (tree <-> chord
<-> redundant), which is why splits, breaks and rebinds never shift a label;
only departures, arrivals and induction moves do.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .overlay import (
    SERVER,
    EdgeKind,
    NodeId,
    Overlay,
    StreamConfig,
    SubstreamView,
    canonical_labels,
    cycle_successor,
    fork_balanced,
    subtree_sizes,
    tree_balanced,
)

# -- messages -----------------------------------------------------------------


@dataclass(frozen=True)
class StreamChunk:
    substream: int
    seq: int
    src: NodeId
    dst: NodeId


@dataclass(frozen=True)
class ControlLabel:
    substream: int
    src: NodeId
    dst: NodeId
    label: int
    addr: NodeId
    parent_balanced: bool = True


@dataclass(frozen=True)
class LabelUpdate:
    substream: int
    pivot: int
    delta: int
    stamp: tuple


@dataclass(frozen=True)
class InduceRequest:
    substream: int
    requester: NodeId
    target: NodeId


@dataclass(frozen=True)
class InduceResponse:
    substream: int
    requester: NodeId
    parent: NodeId
    slot: EdgeKind


@dataclass(frozen=True)
class InsertRequest:
    substream: int
    requester: NodeId
    parent: NodeId
    slot: EdgeKind


@dataclass(frozen=True)
class InsertReply:
    accepted: bool
    reason: str = ""


@dataclass(frozen=True)
class SecondaryBreak:
    substream: int
    fork: NodeId
    child: NodeId


@dataclass(frozen=True)
class SecondaryForm:
    substream: int
    fork: NodeId
    child: NodeId


@dataclass(frozen=True)
class SeatHoist:
    substream: int
    peer: NodeId
    head: NodeId


@dataclass(frozen=True)
class SeatSwap:
    substream: int
    peer: NodeId
    displaced: NodeId


@dataclass
class ChunkClock:
    """Per-substream sequence counters for the forwarded chunks."""

    seq: list[int]

    @classmethod
    def fresh(cls, m: int) -> "ChunkClock":
        return cls([0] * m)

    def tick(self) -> None:
        for i in range(len(self.seq)):
            self.seq[i] += 1


def forward(ov: Overlay, pid: NodeId, i: int, clock: Optional[ChunkClock] = None):
    """Messages one peer emits in the forward phase: the chunk down every
    out-edge, control labels to tree children (a fork tells its primary child
    where the secondary subtree starts and passes its own pair through)."""
    v = ov.peers[pid].views[i]
    seq = clock.seq[i] if clock else 0
    out: list = []
    for c in v.tree_children():
        out.append(StreamChunk(i, seq, pid, c))
    if v.child_red is not None and v.child_red != SERVER:
        out.append(StreamChunk(i, seq, pid, v.child_red))
    bal = fork_balanced(ov, i, pid)
    if v.is_fork():
        sec = v.child_secondary
        out.append(
            ControlLabel(i, pid, v.child_primary, ov.peers[sec].views[i].label, sec, bal)
        )
        if v.ctrl_label is not None:
            out.append(ControlLabel(i, pid, sec, v.ctrl_label, v.ctrl_addr, bal))
    else:
        for c in v.tree_children():
            if v.ctrl_label is not None:
                out.append(ControlLabel(i, pid, c, v.ctrl_label, v.ctrl_addr, bal))
    return out


# -- label-update floods --------------------------------------------------------


@dataclass
class LabelFlood:
    substream: int
    pivot: int
    delta: int
    stamp: tuple
    frontier: set
    visited: set


def apply_label_update(view: SubstreamView, msg_or_flood) -> None:
    """Shift one stored label if it sits at or above the pivot."""
    if view.label is not None and view.label >= msg_or_flood.pivot:
        view.label += msg_or_flood.delta


def start_flood(
    ov: Overlay, i: int, pivot: int, delta: int, origin: NodeId, stamp: tuple,
    skip=(),
) -> LabelFlood:
    """Originate a label-update flood; the originator applies immediately
    (peers listed in ``skip`` had their label written directly)."""
    fl = LabelFlood(i, pivot, delta, stamp, {origin}, {origin} | set(skip))
    if origin not in skip and origin in ov.peers:
        view = ov.peers[origin].views[i]
        apply_label_update(view, fl)
        view.applied_stamps.add(stamp)
    return fl


def _undirected_neighbors(ov: Overlay, i: int, pid: NodeId):
    v = ov.peers[pid].views[i]
    for u in (
        v.parent_tree,
        v.child_primary,
        v.child_secondary,
        v.parent_red,
        v.child_red,
    ):
        if u is not None and u != SERVER and u in ov.peers:
            yield u


def flood_hop(ov: Overlay, flood: LabelFlood) -> bool:
    """Advance one hop over the substream's undirected edges; False when done."""
    nxt = set()
    for v in flood.frontier:
        if v not in ov.peers:
            continue
        for u in _undirected_neighbors(ov, flood.substream, v):
            if u not in flood.visited:
                nxt.add(u)
    for u in sorted(nxt):
        view = ov.peers[u].views[flood.substream]
        if flood.stamp not in view.applied_stamps:
            apply_label_update(view, flood)
            view.applied_stamps.add(flood.stamp)
    flood.visited |= nxt
    flood.frontier = nxt
    return bool(nxt)


def finish_flood(ov: Overlay, flood: LabelFlood) -> None:
    for v in flood.visited:
        if v in ov.peers:
            ov.peers[v].views[flood.substream].applied_stamps.discard(flood.stamp)


# -- block departures and repair -------------------------------------------------


@dataclass
class RepairOutcome:
    repairs: int = 0
    reentries: list = field(default_factory=list)
    floods: list = field(default_factory=list)
    promoted: set = field(default_factory=set)
    record_fallbacks: int = 0


class _ReentryNeeded(Exception):
    pass


def _dead_runs(dead_labels: list[int]) -> list[tuple[int, int]]:
    """Group dead canonical labels into maximal consecutive runs."""
    runs = []
    for lab in sorted(dead_labels):
        if runs and lab == runs[-1][1] + 1:
            runs[-1] = (runs[-1][0], lab)
        else:
            runs.append((lab, lab))
    return runs


def handle_departure(
    ov: Overlay, cfg: StreamConfig, departed, stamp_round: int,
    strict_records: bool = False,
) -> RepairOutcome:
    """Repair all substreams after a block of peers leaves at once.

    Per substream: orphaned tree children re-attach (backing-edge promotion
    for secondary children, otherwise the address-record walk up the dead run
    with slot inheritance at the first live ancestor), and broken redundant
    edges re-point to the first live cycle predecessor.  A peer whose record
    list cannot resolve its repair is evicted and re-enters later; the whole
    pass restarts with it counted dead.  Labels, snapshots and the final
    shift floods all live in the coordinates of the instant the block left,
    so a cascade stays consistent no matter where it restarts.
    ``strict_records`` disables the tracker-assisted fallback so that a peer
    with a useless record list takes the re-entry path instead.
    """
    out = RepairOutcome()
    dead = set(departed)
    canon0 = [_canon_with_dead(ov, i) for i in range(ov.m)]
    snap0 = [
        {pid: _copy_view(ov.peers[pid].views[i]) for pid in ov.peers}
        for i in range(ov.m)
    ]
    pending = set(dead)
    while pending:
        dead |= pending
        pending.clear()
        for i in range(ov.m):
            try:
                _repair_substream(
                    ov, cfg, i, dead, canon0[i], snap0[i], out, strict_records
                )
            except _ReentryNeeded as exc:
                peer = exc.args[0]
                out.reentries.append(peer)
                pending.add(peer)
                break  # restart all substreams with the enlarged dead set
        else:
            break
    seq = 0
    for i in range(ov.m):
        canon, inv = canon0[i], {lab: pid for pid, lab in canon0[i].items()}
        dead_labs = [canon[d] for d in dead if d in canon]
        for lo, hi in _dead_runs(dead_labs):
            succ = inv.get(hi + 1)
            if succ is None or succ in dead:
                continue  # the run reached the end node: nothing above shifts
            flood = start_flood(
                ov, i, lo, -(hi - lo + 1), succ, (stamp_round, i, "dep", seq)
            )
            seq += 1
            out.floods.append(flood)
    for d in sorted(dead):
        ov.peers.pop(d, None)
    for i in range(ov.m):
        ov.server_children[i] = [r for r in ov.server_children[i] if r not in dead]
    return out


def _repair_substream(ov, cfg, i, dead, canon, snapshot, out, strict):
    live = [p for p in ov.peers if p not in dead]
    if not live:
        return
    inv = {lab: pid for pid, lab in canon.items()}

    def is_dead(x):
        return x is not None and x != SERVER and x in dead

    # 1. orphaned tree children, ascending label
    orphans = sorted(
        (p for p in live if is_dead(ov.peers[p].views[i].parent_tree)),
        key=lambda p: canon[p],
    )
    for v in orphans:
        view = ov.peers[v].views[i]
        dead_parent = view.parent_tree
        was_secondary = snapshot[dead_parent].child_secondary == v
        if was_secondary and view.parent_red is not None and not is_dead(view.parent_red):
            b = view.parent_red
            bv = ov.peers[b].views[i]
            bv.child_primary = v
            bv.child_red = None
            view.parent_tree = b
            view.parent_red = None
            out.promoted.add((b, v, i))
            out.repairs += 1
            continue
        _reattach_by_records(ov, cfg, i, v, dead, canon, inv, snapshot, out, strict)

    # 2. broken redundant in-edges, ascending label
    for v in sorted(live, key=lambda p: canon[p]):
        view = ov.peers[v].views[i]
        if not is_dead(view.parent_red):
            continue
        a = _walk_first_live(ov, i, v, dead, canon, inv, snapshot, out, strict)
        if a == SERVER:
            # every cycle predecessor went away: v heads the cycle now and
            # draws straight from the source, so the backing edge just drops
            view.parent_red = None
            out.repairs += 1
            continue
        av = ov.peers[a].views[i]
        if is_dead(av.child_primary):
            av.child_primary = None
        if is_dead(av.child_secondary):
            av.child_secondary = None
        if a == view.parent_tree:
            # the whole sibling subtree went away: drop the backing edge and
            # let the remaining child fill the primary slot
            view.parent_red = None
            if av.child_red is not None and is_dead(av.child_red):
                av.child_red = None
            if av.child_primary is None and av.child_secondary == v:
                av.child_secondary = None
                av.child_primary = v
        else:
            if av.child_red is None or is_dead(av.child_red):
                av.child_red = v
                view.parent_red = a
                out.repairs += 1

    # 3. clean residual pointers to the dead; close the cycle at the new end
    for v in sorted(live, key=lambda p: canon[p]):
        view = ov.peers[v].views[i]
        if is_dead(view.child_primary):
            view.child_primary = None
        if is_dead(view.child_secondary):
            view.child_secondary = None
        if is_dead(view.parent_red):
            view.parent_red = None
        if is_dead(view.child_red):
            view.child_red = None
            out.repairs += 1
        if view.child_primary is None and view.child_secondary is not None:
            view.child_primary = view.child_secondary
            view.child_secondary = None
    # The server-facing edge belongs to the last peer on the re-linked cycle.
    # Balancing can interleave cycle order and label order differently, so
    # walk the repaired cycle for the true end; trust the walk only when it
    # covers every survivor, else fall back to the highest label.
    tail = max(live, key=lambda p: canon[p])
    root = next(
        (p for p in live if ov.peers[p].views[i].parent_tree == SERVER), None
    )
    if root is not None:
        seen: set = set()
        v = root
        while v is not None and v not in seen:
            seen.add(v)
            nxt = cycle_successor(ov.peers[v].views[i])
            if nxt is None or nxt in dead or nxt not in ov.peers:
                break
            v = nxt
        if len(seen) == len(live):
            tail = v
    tv = ov.peers[tail].views[i]
    if tv.is_leaf() and tv.child_red is None:
        tv.child_red = SERVER


def _canon_with_dead(ov, i):
    try:
        return canonical_labels(ov, i)
    except Exception:
        # mid-cascade: fall back to stored labels
        big = 10 ** 9
        return {
            p: (ov.peers[p].views[i].label or big + k)
            for k, p in enumerate(sorted(ov.peers))
        }


def _copy_view(v: SubstreamView) -> SubstreamView:
    return SubstreamView(
        label=v.label,
        parent_tree=v.parent_tree,
        parent_red=v.parent_red,
        child_primary=v.child_primary,
        child_secondary=v.child_secondary,
        child_red=v.child_red,
        records=list(v.records),
    )


def _record_run(ov, i, v, dead):
    """Leading dead run in v's records; returns (last_dead_record, ok)."""
    recs = ov.peers[v].views[i].records
    last = None
    for rec in recs:
        anc = rec[0]
        if anc in dead:
            last = rec
        else:
            return last, True
    return last, False  # ran out of records while still inside the run


def _walk_first_live(ov, i, v, dead, canon, inv, snapshot, out, strict):
    """First live cycle predecessor of v (SERVER when the whole prefix died),
    via records, with a structural fallback outside strict mode."""
    recs = ov.peers[v].views[i].records
    for rec in recs:
        anc = rec[0]
        if anc not in dead and anc in ov.peers:
            return anc
    if recs:
        # the whole list sits inside the dead run; the deepest record still
        # names the next predecessor through its own parent pointers
        last = recs[-1]
        cand = last[2] if last[2] is not None else last[1]
        if cand == SERVER:
            return SERVER  # the run swallowed the cycle head itself
        if cand is not None and cand not in dead and cand in ov.peers:
            return cand
    if strict:
        raise _ReentryNeeded(v)
    lab = canon.get(v)
    if lab is not None:
        x = lab - 1
        while x >= 1:
            cand = inv.get(x)
            if cand is not None and cand not in dead:
                out.record_fallbacks += 1
                return cand
            x -= 1
        out.record_fallbacks += 1
        return SERVER
    raise _ReentryNeeded(v)


def _reattach_by_records(ov, cfg, i, v, dead, canon, inv, snapshot, out, strict):
    # A run that exactly exhausts the list still leaves the topmost record
    # usable: its parent fields name the attach point one step further up.
    last, _ = _record_run(ov, i, v, dead)
    if last is None:
        if strict:
            raise _ReentryNeeded(v)
        out.record_fallbacks += 1
        last = _structural_run_top(ov, i, v, dead, canon, inv, snapshot)
        if last is None:
            raise _ReentryNeeded(v)
    try:
        _reattach_with(ov, i, v, last, dead, snapshot, out)
        return
    except _ReentryNeeded:
        if strict:
            raise
    out.record_fallbacks += 1
    alt = _structural_run_top(ov, i, v, dead, canon, inv, snapshot)
    if alt is None or alt == last:
        raise _ReentryNeeded(v)
    _reattach_with(ov, i, v, alt, dead, snapshot, out)


def _structural_run_top(ov, i, v, dead, canon, inv, snapshot):
    """Tracker-assisted equivalent of the record walk, from the pre-removal
    structure: find the top of the consecutive dead label run below v."""
    lab = canon.get(v)
    if lab is None:
        return None
    top_id = None
    x = lab - 1
    while x >= 1 and inv.get(x) in dead:
        top_id = inv[x]
        x -= 1
    if top_id is None:
        return None
    sv = snapshot[top_id]
    t_par = sv.parent_tree if sv.parent_tree is not None else SERVER
    return (top_id, t_par, sv.parent_red)


def _reattach_with(ov, i, v, rec, dead, snapshot, out):
    top, t_par, u_par = rec
    if t_par == SERVER:
        _claim_slot(ov, i, v, None, top, dead, snapshot, out)
    elif t_par is not None and t_par not in dead and t_par in ov.peers:
        _claim_slot(ov, i, v, t_par, top, dead, snapshot, out)
    elif u_par is not None and u_par not in dead and u_par in ov.peers:
        # the run's top was a secondary child under a dead fork: its backing
        # leaf promotes into a tree parent for the survivor
        bv = ov.peers[u_par].views[i]
        bv.child_primary = v
        if bv.child_red in dead or bv.child_red == v:
            bv.child_red = None
        view = ov.peers[v].views[i]
        view.parent_tree = u_par
        if view.parent_red in dead:
            view.parent_red = None
        out.promoted.add((u_par, v, i))
        out.repairs += 1
    else:
        raise _ReentryNeeded(v)


def _claim_slot(ov, i, v, parent, top_dead, dead, snapshot, out):
    """v inherits the slot the dead run's top node held at the live parent."""
    view = ov.peers[v].views[i]
    if parent is None:
        ov.server_children[i] = [v]
        view.parent_tree = SERVER
        out.repairs += 1
        return
    pv = ov.peers[parent].views[i]
    psnap = snapshot[parent]
    if psnap.child_secondary == top_dead:
        pv.child_secondary = v
        view.parent_tree = parent
        out.repairs += 1
        # the backing edge that fed the dead secondary re-points to v; its
        # source is the run top's cycle predecessor, live by construction
        back = snapshot[top_dead].parent_red
        if back is not None and back != v and back not in dead and back in ov.peers:
            ov.peers[back].views[i].child_red = v
            view.parent_red = back
            out.repairs += 1
    else:
        pv.child_primary = v
        view.parent_tree = parent
        if view.parent_red is not None and (view.parent_red in dead):
            view.parent_red = None
        out.repairs += 1


# -- arrivals ---------------------------------------------------------------------


@dataclass
class ArrivalOutcome:
    peer: NodeId
    floods: list = field(default_factory=list)
    retries: int = 0
    forced_root: int = 0


def _local_accept(ov: Overlay, i: int, w: NodeId, sizes=None) -> bool:
    """Insertion above w: a degree-one (or leaf) target always accepts, a fork
    only while its median is off."""
    wv = ov.peers[w].views[i]
    if len(wv.tree_children()) <= 1:
        return True
    return not fork_balanced(ov, i, w, sizes)


def _insert_above(ov, i, v, w, stamp) -> Optional[LabelFlood]:
    """Splice v into w's slot (server child included); w becomes v's primary
    child, a backing edge feeding a secondary slot re-points to v."""
    canon = canonical_labels(ov, i, exclude={v})
    vv = ov.peers[v].views[i]
    wv = ov.peers[w].views[i]
    g = wv.parent_tree
    if g == SERVER:
        ov.server_children[i] = [v]
        vv.parent_tree = SERVER
    else:
        gv = ov.peers[g].views[i]
        if gv.child_primary == w:
            gv.child_primary = v
        else:
            gv.child_secondary = v
        vv.parent_tree = g
    if wv.parent_red is not None:
        b = wv.parent_red
        ov.peers[b].views[i].child_red = v
        vv.parent_red = b
        wv.parent_red = None
    vv.child_primary = w
    wv.parent_tree = v
    vv.label = canon[w]
    return start_flood(ov, i, canon[w], +1, v, stamp, skip={v})


def _adopt_below(ov, i, v, c, stamp) -> Optional[LabelFlood]:
    """v becomes the leaf c's primary child, inheriting its cycle edge."""
    canon = canonical_labels(ov, i, exclude={v})
    vv = ov.peers[v].views[i]
    cv = ov.peers[c].views[i]
    t = cv.child_red
    cv.child_red = None
    cv.child_primary = v
    vv.parent_tree = c
    vv.child_red = t
    if t is not None and t != SERVER:
        ov.peers[t].views[i].parent_red = v
    vv.label = canon[c] + 1
    if canon[c] + 1 > len(canon):  # adopted past the old end: nothing shifts
        return None
    return start_flood(ov, i, canon[c] + 1, +1, v, stamp, skip={v})


def handle_arrival(
    ov: Overlay, cfg: StreamConfig, newcomer: NodeId, contact: Optional[NodeId],
    stamp_round: int,
) -> ArrivalOutcome:
    """Join, one substream at a time: adopt below a leaf contact, splice into a
    degree-one contact's child edge, and at a fork walk the candidate ladder
    (above the child acquired in the lowest substream, then the contact's
    primary and secondary children) under the local acceptance test, falling
    back to a tracker insert above the root."""
    out = ArrivalOutcome(newcomer)
    if newcomer not in ov.peers:
        ov.add_peer(newcomer)
    for i in range(ov.m):
        stamp = (stamp_round, i, "join", newcomer)
        if ov.n == 1:
            ov.server_children[i] = [newcomer]
            nv = ov.peers[newcomer].views[i]
            nv.parent_tree = SERVER
            nv.label = 1
            nv.child_red = SERVER
            continue
        c = contact if contact in ov.peers and contact != newcomer else ov.root(i)
        cv = ov.peers[c].views[i]
        if cv.is_leaf():
            fl = _adopt_below(ov, i, newcomer, c, stamp)
        elif len(cv.tree_children()) == 1:
            fl = _insert_above(ov, i, newcomer, cv.tree_children()[0], stamp)
        else:
            acquired = None
            for j in range(i):
                ww = ov.peers[newcomer].views[j].child_primary
                if ww is not None:
                    acquired = ww
                    break
            sizes = subtree_sizes(ov, i)
            fl = None
            for w in (acquired, cv.child_primary, cv.child_secondary):
                if w is None or w == newcomer:
                    continue
                if _local_accept(ov, i, w, sizes):
                    fl = _insert_above(ov, i, newcomer, w, stamp)
                    break
                out.retries += 1
            if fl is None:
                root = ov.root(i)
                fl = _insert_above(ov, i, newcomer, root, stamp)
                out.forced_root += 1
        if fl is not None:
            out.floods.append(fl)
    return out


# -- chain splits and secondary breaks --------------------------------------------


def chain_splits(
    ov: Overlay, cfg: StreamConfig, i: int, canon=None, sizes=None
) -> list[SecondaryForm]:
    """Any chain whose span outgrew the window forks at its median.  The new
    fork seat goes to the topmost chain member not already holding one in
    another substream; the displaced tree edge below the median demotes to a
    redundant edge.  Labels never move."""
    if cfg.substreams < 2 or ov.n < 2:
        return []
    if canon is None:
        try:
            canon = canonical_labels(ov, i)
        except Exception:
            return []
    if sizes is None:
        sizes = subtree_sizes(ov, i)
    inv = {lab: pid for pid, lab in canon.items()}
    ops: list[SecondaryForm] = []
    heads = []
    for lab in range(1, len(canon) + 1):  # label order == pre-order
        pid = inv[lab]
        v = ov.peers[pid].views[i]
        if len(v.tree_children()) != 1 or v.child_primary is None:
            continue
        par = v.parent_tree
        par_fork = par not in (None, SERVER) and ov.peers[par].views[i].is_fork()
        if par == SERVER or par_fork:
            heads.append(pid)
    for head in heads:
        if sizes[head] <= cfg.chain_max:
            continue
        u = head
        while _holds_fork_elsewhere(ov, u, i):
            kids = ov.peers[u].views[i].tree_children()
            if len(kids) != 1:
                u = None
                break
            u = kids[0]
        if u is None or sizes.get(u, 0) <= cfg.chain_max:
            continue  # every eligible member still shows a seat: wait a round
        lab = canon[u]
        end = lab + sizes[u]
        t = -((-(lab + end)) // 2)
        if t - 1 - lab < cfg.chain_min or end - t < cfg.chain_min:
            continue  # a side below the window would only invite a break
        w = inv[t]
        p = inv[t - 1]
        pv = ov.peers[p].views[i]
        uv = ov.peers[u].views[i]
        wv = ov.peers[w].views[i]
        if pv.child_primary != w or pv.child_secondary is not None:
            continue  # only a plain chain edge may demote: wait a round
        if uv.child_secondary is not None:
            continue
        pv.child_primary = None
        pv.child_red = w
        wv.parent_red = p
        wv.parent_tree = u
        uv.child_secondary = w
        ops.append(SecondaryForm(i, u, w))
        sizes = subtree_sizes(ov, i)  # labels are stable, spans are not
    return ops


def _holds_fork_elsewhere(ov: Overlay, pid: NodeId, i: int) -> bool:
    return any(j != i and v.is_fork() for j, v in enumerate(ov.peers[pid].views))


def _swap_occupants(ov: Overlay, i: int, a: NodeId, b: NodeId) -> None:
    """Exchange which peer holds which position in tree i.  Labels ride the
    positions, so nothing floods; every other substream is untouched."""
    fields = ("parent_tree", "child_primary", "child_secondary", "parent_red", "child_red")
    for p in ov.peers:
        view = ov.peers[p].views[i]
        for fld in fields:
            x = getattr(view, fld)
            if x == a:
                setattr(view, fld, b)
            elif x == b:
                setattr(view, fld, a)
    ov.peers[a].views[i], ov.peers[b].views[i] = (
        ov.peers[b].views[i],
        ov.peers[a].views[i],
    )
    ov.server_children[i] = [
        b if x == a else a if x == b else x for x in ov.server_children[i]
    ]


def chain_hoists(
    ov: Overlay, cfg: StreamConfig, i: int, stamp_round: int, canon=None, sizes=None
):
    """A split can deadlock: the chain outgrew the window, its head already
    holds a fork seat in another substream, and every seat-free member sits
    over a span too small to fork legally.  The topmost free member is then
    hoisted into the head's own seat (the same excise-and-splice an accepted
    induction runs, labels shifting through two floods), so the next round's
    split finds a free head over the full span.  One hoist per substream per
    round; returns (ops, floods, promoted)."""
    if cfg.substreams < 2 or ov.n < 3:
        return [], [], set()
    if canon is None:
        try:
            canon = canonical_labels(ov, i)
        except Exception:
            return [], [], set()
    if sizes is None:
        sizes = subtree_sizes(ov, i)
    inv = {lab: pid for pid, lab in canon.items()}
    for lab0 in range(1, len(canon) + 1):  # label order == pre-order
        pid = inv[lab0]
        v = ov.peers[pid].views[i]
        if len(v.tree_children()) != 1 or v.child_primary is None:
            continue
        par = v.parent_tree
        par_fork = par not in (None, SERVER) and ov.peers[par].views[i].is_fork()
        if not (par == SERVER or par_fork):
            continue
        head = pid
        cur = head
        while len(ov.peers[cur].views[i].tree_children()) == 1:
            cur = ov.peers[cur].views[i].tree_children()[0]
        strangled = len(ov.peers[cur].views[i].tree_children()) == 2
        if strangled:
            # no fork may sit strictly below a degree-one run: lift it into
            # the head seat; excising it collapses the fork, and the split
            # re-forks at the span median
            target = cur
        else:
            if sizes[head] <= cfg.chain_max:
                continue
            if not _holds_fork_elsewhere(ov, head, i):
                continue  # a free head is the split's own problem, not ours
            u = head
            while _holds_fork_elsewhere(ov, u, i):
                kids = ov.peers[u].views[i].tree_children()
                if len(kids) != 1:
                    u = None
                    break
                u = kids[0]
            if u is None:
                # every member holds a seat in another substream: trade the
                # head's position to the lowest-labelled free peer outside
                # the span, and the split then fires over a free head
                end = canon[head] + sizes[head]
                b = None
                for ql in range(1, len(canon) + 1):
                    q = inv[ql]
                    if canon[head] <= ql < end:
                        continue
                    qv = ov.peers[q].views[i]
                    if qv.is_fork() or _holds_fork_elsewhere(ov, q, i):
                        continue
                    b = q
                    break
                if b is None:
                    continue
                _swap_occupants(ov, i, head, b)
                return [SeatSwap(i, b, head)], [], set()
            if sizes.get(u, 0) > cfg.chain_max:
                continue  # the split can still seat the fork at u itself
            target = u
        if par == SERVER:
            x, flag = SERVER, EdgeKind.TREE_PRIMARY
        else:
            pv = ov.peers[par].views[i]
            flag = (
                EdgeKind.TREE_PRIMARY
                if pv.child_primary == head
                else EdgeKind.TREE_SECONDARY
            )
            x = par
        res = InductionResult("accepted", i, target)
        _induce_move(ov, cfg, res, target, x, head, flag, i, stamp_round)
        return [SeatHoist(i, target, head)], res.floods, res.promoted
    return [], [], set()


def secondary_breaks(ov: Overlay, cfg: StreamConfig, i: int, canon=None, sizes=None):
    """A fork whose primary or secondary side shrank below the window breaks
    its secondary edge; the backing redundant edge promotes to carry the
    subtree (warm, so it costs one extra hop this round).  The fork whose span
    ends at the sentinel is exempt: its secondary side is the tail."""
    ops: list[SecondaryBreak] = []
    promoted: set = set()
    if cfg.substreams < 2 or ov.n < 2:
        return ops, promoted
    if canon is None:
        try:
            canon = canonical_labels(ov, i)
        except Exception:
            return ops, promoted
    if sizes is None:
        sizes = subtree_sizes(ov, i)
    inv = {lab: pid for pid, lab in canon.items()}
    for lab in range(1, len(canon) + 1):  # label order == pre-order
        pid = inv[lab]
        v = ov.peers[pid].views[i]
        if not v.is_fork():
            continue
        if canon[pid] + sizes[pid] == ov.n + 1:
            continue
        p_size = sizes[v.child_primary]
        s_size = sizes[v.child_secondary]
        if p_size >= cfg.chain_min and s_size >= cfg.chain_min:
            continue
        sec = v.child_secondary
        sv = ov.peers[sec].views[i]
        b = sv.parent_red
        if b is None or b not in ov.peers:
            continue
        bv = ov.peers[b].views[i]
        bv.child_primary = sec
        bv.child_red = None
        sv.parent_tree = b
        sv.parent_red = None
        v.child_secondary = None
        promoted.add((b, sec, i))
        ops.append(SecondaryBreak(i, pid, sec))
        sizes = subtree_sizes(ov, i)
    return ops, promoted


# -- the induction pipeline --------------------------------------------------------


@dataclass
class InsertPipeline:
    requester: NodeId
    substream: int
    start_round: int
    fire_round: int
    target: NodeId


PIPELINE_SLOTS = 5  # request, relay down, relay across, relay up, insert


def request_ready(
    ov: Overlay, cfg: StreamConfig, v: NodeId, i: int, sizes=None
) -> Optional[NodeId]:
    """The request guard: a degree<=1 peer below a balanced fork asks for its
    seat in the next tree unless its span already touches the sentinel.
    Returns the control address the request rides to, None when the guard
    fails."""
    view = ov.peers[v].views[i]
    if len(view.tree_children()) > 1:
        return None
    par = view.parent_tree
    if par in (None, SERVER) or not ov.peers[par].views[i].is_fork():
        return None
    if not fork_balanced(ov, i, par, sizes):
        return None
    target = _ctrl_address(ov, i, v)
    if target in (None, SERVER):
        return None
    return target


def _ctrl_address(ov: Overlay, i: int, v: NodeId) -> Optional[NodeId]:
    """Authoritative equivalent of the piggybacked control address: the
    secondary sibling of the first primary-side edge above v."""
    cur, par = v, ov.peers[v].views[i].parent_tree
    while par not in (None, SERVER):
        pv = ov.peers[par].views[i]
        if pv.child_primary == cur and pv.child_secondary is not None:
            return pv.child_secondary
        cur, par = par, pv.parent_tree
    return SERVER


@dataclass
class InductionResult:
    status: str  # accepted | refused | noop | abandoned
    substream: int
    requester: NodeId
    floods: list = field(default_factory=list)
    promoted: set = field(default_factory=set)
    moved_to: Optional[tuple] = None


def pairing(ov: Overlay, cfg: StreamConfig, v: NodeId, i: int):
    """Resolve the requester's seat proposal for the next tree.

    Ride the chain to its leaf, cross the redundant edge to find the fork F
    whose rotation cycle the chain backs, then climb to the nearest fork Q
    strictly above F.  No Q means the seat proposal is the root edge.
    Otherwise the occupant of Q's position in the next tree is the head of
    Q's own backing chain, and the slot is the side of Q the climb arrived
    through."""
    cur = v
    seen = 0
    while True:
        kids = ov.peers[cur].views[i].tree_children()
        if len(kids) == 0:
            break
        if len(kids) > 1 or seen > ov.n:
            return None
        cur = kids[0]
        seen += 1
    t = ov.peers[cur].views[i].child_red
    if t is None or t == SERVER:
        return None
    F = ov.peers[t].views[i].parent_tree
    if F in (None, SERVER):
        return None
    prev, par = F, ov.peers[F].views[i].parent_tree
    seen = 0
    while par not in (None, SERVER) and not ov.peers[par].views[i].is_fork():
        prev, par = par, ov.peers[par].views[i].parent_tree
        seen += 1
        if seen > ov.n:
            return None
    j = (i + 1) % ov.m
    if par in (None, SERVER):
        return (SERVER, EdgeKind.TREE_PRIMARY, j)
    Q = par
    qv = ov.peers[Q].views[i]
    flag = EdgeKind.TREE_PRIMARY if qv.child_primary == prev else EdgeKind.TREE_SECONDARY
    sQ = qv.child_secondary
    if sQ is None:
        return None
    b = ov.peers[sQ].views[i].parent_red
    if b is None or b not in ov.peers:
        return None
    x = b
    seen = 0
    while True:
        up = ov.peers[x].views[i].parent_tree
        if up in (None, SERVER) or len(ov.peers[up].views[i].tree_children()) != 1:
            break
        x = up
        seen += 1
        if seen > ov.n:
            return None
    return (x, flag, j)


def fire_induction(
    ov: Overlay, cfg: StreamConfig, pipe: InsertPipeline, stamp_round: int,
    trees_touched: set,
) -> InductionResult:
    """Re-validate and execute one pipeline at its fire slot.  The target tree
    gate comes first: while the next tree is balanced every proposal is
    refused; only an unbalanced tree runs the local test.  One induction per
    tree per round keeps concurrently fired proposals from chasing stale
    topology."""
    v, i = pipe.requester, pipe.substream
    res = InductionResult("abandoned", i, v)
    if v not in ov.peers or request_ready(ov, cfg, v, i) is None:
        return res
    pair = pairing(ov, cfg, v, i)
    if pair is None:
        return res
    x, flag, j = pair
    if j in trees_touched:
        return res
    if x == SERVER:
        w = ov.root(j)
    else:
        xv = ov.peers[x].views[j]
        w = xv.child_primary if flag is EdgeKind.TREE_PRIMARY else xv.child_secondary
    if w == v:
        res.status = "noop"
        return res
    if tree_balanced(ov, j, cfg):
        res.status = "refused"
        return res
    if w is not None and not _local_accept(ov, j, w):
        res.status = "refused"
        return res
    if w is None and not _missing_slot_ok(ov, j, x, flag):
        return res
    _induce_move(ov, cfg, res, v, x, w, flag, j, stamp_round)
    res.status = "accepted"
    res.moved_to = (j, x, flag.value)
    trees_touched.add(j)
    return res


def _missing_slot_ok(ov, j, x, flag) -> bool:
    if x == SERVER:
        return False
    xv = ov.peers[x].views[j]
    if xv.is_leaf():
        return True
    return flag is EdgeKind.TREE_SECONDARY and xv.child_primary is not None


def _induce_move(ov, cfg, res, v, x, w, flag, j, stamp_round) -> None:
    """Excise v from its current seat in tree j, then splice it at the
    proposed one.  Both halves shift labels through their own floods."""
    canon = canonical_labels(ov, j)
    ow = canon[v]
    vv = ov.peers[v].views[j]
    p = vv.parent_tree
    kids = vv.tree_children()
    succ_after: Optional[NodeId] = None
    if not kids:
        red_target = vv.child_red  # may be SERVER when v was the end node
        succ_after = red_target if red_target != SERVER else None
        if p == SERVER:
            ov.server_children[j] = []
        else:
            pv = ov.peers[p].views[j]
            if pv.child_primary == v:
                pv.child_primary = None
                if pv.child_secondary is not None:
                    # v was both the primary side and its sibling's backing
                    # leaf: the fork collapses into a plain chain edge
                    s = pv.child_secondary
                    pv.child_secondary = None
                    pv.child_primary = s
                    sv = ov.peers[s].views[j]
                    if sv.parent_red == v:
                        sv.parent_red = None
                elif pv.child_red is None:
                    pv.child_red = red_target
                    if succ_after is not None:
                        ov.peers[succ_after].views[j].parent_red = p
            else:
                pv.child_secondary = None
                if vv.parent_red is not None:
                    b = vv.parent_red
                    ov.peers[b].views[j].child_red = red_target
                    if succ_after is not None:
                        ov.peers[succ_after].views[j].parent_red = b
                    vv.parent_red = None
        vv.child_red = None
    elif len(kids) == 1:
        c = kids[0]
        succ_after = c
        cv = ov.peers[c].views[j]
        if p == SERVER:
            ov.server_children[j] = [c]
            cv.parent_tree = SERVER
        else:
            pv = ov.peers[p].views[j]
            if pv.child_primary == v:
                pv.child_primary = c
            else:
                pv.child_secondary = c
                if vv.parent_red is not None:
                    b = vv.parent_red
                    ov.peers[b].views[j].child_red = c
                    cv.parent_red = b
                    vv.parent_red = None
            cv.parent_tree = p
        if vv.child_secondary == c:
            vv.child_secondary = None
        else:
            vv.child_primary = None
    else:
        cp, cs = vv.child_primary, vv.child_secondary
        succ_after = cp
        cpv = ov.peers[cp].views[j]
        if p == SERVER:
            ov.server_children[j] = [cp]
            cpv.parent_tree = SERVER
        else:
            pv = ov.peers[p].views[j]
            if pv.child_primary == v:
                pv.child_primary = cp
            else:
                pv.child_secondary = cp
                if vv.parent_red is not None:
                    b = vv.parent_red
                    ov.peers[b].views[j].child_red = cp
                    cpv.parent_red = b
                    vv.parent_red = None
            cpv.parent_tree = p
        csv = ov.peers[cs].views[j]
        b2 = csv.parent_red
        if b2 is not None:
            bv = ov.peers[b2].views[j]
            bv.child_primary = cs
            bv.child_red = None
            csv.parent_tree = b2
            csv.parent_red = None
            res.promoted.add((b2, cs, j))
        vv.child_primary = None
        vv.child_secondary = None
    vv.label = None
    vv.parent_tree = None
    if succ_after is not None:
        res.floods.append(
            start_flood(ov, j, ow, -1, succ_after, (stamp_round, j, "ind", 0, v))
        )
    # splice back in (stamped after the excision so the shifts replay in order)
    stamp = (stamp_round, j, "ind", 1, v)
    if w is not None:
        res.floods.append(_insert_above_known(ov, j, v, w, x, flag, stamp))
    else:
        res.floods.append(_append_missing(ov, j, v, x, flag, stamp))
    res.floods = [f for f in res.floods if f is not None]


def _insert_above_known(ov, j, v, w, x, flag, stamp) -> Optional[LabelFlood]:
    canon = canonical_labels(ov, j, exclude={v})
    vv = ov.peers[v].views[j]
    wv = ov.peers[w].views[j]
    if x == SERVER:
        ov.server_children[j] = [v]
        vv.parent_tree = SERVER
    else:
        xv = ov.peers[x].views[j]
        if flag is EdgeKind.TREE_PRIMARY:
            xv.child_primary = v
        else:
            xv.child_secondary = v
        vv.parent_tree = x
    if wv.parent_red is not None:
        b = wv.parent_red
        ov.peers[b].views[j].child_red = v
        vv.parent_red = b
        wv.parent_red = None
    vv.child_primary = w
    wv.parent_tree = v
    vv.label = canon[w]
    return start_flood(ov, j, canon[w], +1, v, stamp, skip={v})


def _append_missing(ov, j, v, x, flag, stamp) -> Optional[LabelFlood]:
    canon = canonical_labels(ov, j, exclude={v})
    sizes = subtree_sizes(ov, j)
    vv = ov.peers[v].views[j]
    xv = ov.peers[x].views[j]
    if xv.is_leaf():
        return _adopt_below(ov, j, v, x, stamp)
    # degree-one span: v becomes the secondary child seated at the span's end,
    # backed by the span's own leaf
    end = canon[x] + sizes[x]
    inv = {lab: pid for pid, lab in canon.items()}
    b = inv[end - 1]
    bv = ov.peers[b].views[j]
    old = bv.child_red
    bv.child_red = v
    vv.parent_red = b
    vv.parent_tree = x
    xv.child_secondary = v
    vv.child_red = old
    if old is not None and old != SERVER:
        ov.peers[old].views[j].parent_red = v
    vv.label = end
    if end > len(canon):
        return None
    return start_flood(ov, j, end, +1, v, stamp, skip={v})


# -- first-tree active balance ------------------------------------------------------


def induced_balance_tick(ov: Overlay, cfg: StreamConfig, snap=None):
    """Advance per-fork timers in every substream; a fork stuck off-median
    for the balance threshold rounds (its own parent willing) re-binds its
    secondary edge to the current median.  Pure edge reclassification: break
    the old secondary (promoting its backing), then demote the median's chain
    edge into the new backing.  ``snap`` may carry per-tree
    ``(labels, sizes)`` pairs already derived from the current structure."""
    ops: list = []
    promoted: set = set()
    if cfg.substreams < 2 or ov.n < 3:
        return ops, promoted
    for i in range(ov.m):
        pair = snap.get(i) if snap else None
        if pair is not None:
            canon, sizes = pair
        else:
            try:
                canon = canonical_labels(ov, i)
            except Exception:
                continue
            sizes = subtree_sizes(ov, i)
        inv = {lab: pid for pid, lab in canon.items()}
        for lab in range(1, len(canon) + 1):  # label order == pre-order
            pid = inv[lab]
            view = ov.peers[pid].views[i]
            if not view.is_fork():
                view.balance_timer = 0
                continue
            if fork_balanced(ov, i, pid, sizes):
                view.balance_timer = 0
                continue
            view.balance_timer += 1
            if view.balance_timer < cfg.balance_threshold:
                continue
            par = view.parent_tree
            if par not in (None, SERVER) and ov.peers[par].views[i].is_fork():
                if not fork_balanced(ov, i, par, sizes):
                    continue  # parent first; keep the timer armed
            if _rebind_secondary(ov, cfg, i, pid, canon, sizes, inv, ops, promoted):
                view.balance_timer = 0
                sizes = subtree_sizes(ov, i)
    return ops, promoted


def _rebind_secondary(ov, cfg, i, v, canon, sizes, inv, ops, promoted) -> bool:
    view = ov.peers[v].views[i]
    old = view.child_secondary
    old_view = ov.peers[old].views[i]
    b = old_view.parent_red
    if b is None or b not in ov.peers:
        return False
    # break the old secondary edge, promoting its backing leaf; this re-hangs
    # the old subtree on the primary side, putting the median on the spine
    bv = ov.peers[b].views[i]
    bv.child_primary = old
    bv.child_red = None
    old_view.parent_tree = b
    old_view.parent_red = None
    view.child_secondary = None
    promoted.add((b, old, i))
    ops.append(SecondaryBreak(i, v, old))
    # form the new one at the median (the break alone is progress if we can't)
    sizes = subtree_sizes(ov, i)
    end = canon[v] + sizes[v]
    t = -((-(canon[v] + end)) // 2)
    w = inv.get(t)
    if w is None or w == v:
        return True
    if canon[w] + sizes.get(w, 0) != end:
        return True  # median off the right spine: leave it to the splits
    wv = ov.peers[w].views[i]
    p = wv.parent_tree
    if p in (None, SERVER) or p == v:
        return True
    pv = ov.peers[p].views[i]
    was_secondary = pv.child_secondary == w
    if not was_secondary and len(pv.tree_children()) != 1:
        return True  # only a plain chain edge may demote into the backing
    if was_secondary:
        pv.child_secondary = None  # w keeps its existing backing edge
    else:
        pv.child_primary = None
        pv.child_red = w
        wv.parent_red = p
    wv.parent_tree = v
    view.child_secondary = w
    ops.append(SecondaryForm(i, v, w))
    return True
