"""Overlay state: per-peer substream views, canonical labels, safety checks.

The stream is cut into ``m`` substreams, each pushed down its own spanning
structure over the same peers: a primary tree (with at most binary forks), plus
one redundant edge out of every tree leaf.  Labels order the peers of one
substream so that following primary-tree edges and redundant edges in label
order walks a single cycle  server -> 1 -> 2 -> ... -> n -> server;  secondary
tree edges are chords of that cycle.  Everything the maintenance protocol does
is phrased over these views.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterator, Optional

import numpy as np

from . import _kernels

#: Reserved node id for the stream server (never a peer id).
SERVER = 0

NodeId = int
Label = int


class EdgeKind(str, Enum):
    TREE_PRIMARY = "primary"
    TREE_SECONDARY = "secondary"
    REDUNDANT = "redundant"


class OverlayError(ValueError):
    pass


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(x).limit_denominator(10**9)
    return Fraction(x)


@dataclass
class StreamConfig:
    """Static parameters of a run.

    ``substreams`` is the redundancy count m; the stream rate is m/(m+1) and
    each substream carries 1/(m+1).  ``block_limit`` bounds how many peers may
    fail together; ``memory_slots`` is the total address-record budget per
    peer (defaults to block_limit per substream, only overridable upward).
    """

    n_initial: int
    substreams: int
    capacity: Fraction = Fraction(1)
    tolerance: Fraction = Fraction(0)
    block_limit: int = 1
    memory_slots: Optional[int] = None
    degree_bound: int = 2
    seed: int = 0
    horizon: int = 0

    def __post_init__(self) -> None:
        self.capacity = _as_fraction(self.capacity)
        self.tolerance = _as_fraction(self.tolerance)
        if self.substreams < 1:
            raise OverlayError("substreams must be >= 1")
        if self.n_initial < 0:
            raise OverlayError("n_initial must be >= 0")
        if not (0 <= self.tolerance <= 1):
            raise OverlayError("tolerance must lie in [0, 1]")
        if self.block_limit < 1:
            raise OverlayError("block_limit must be >= 1")
        floor = self.block_limit * self.substreams
        if self.memory_slots is None:
            self.memory_slots = floor
        elif self.memory_slots < floor:
            raise OverlayError(
                f"memory_slots={self.memory_slots} below block_limit*substreams={floor}"
            )

    @property
    def rate(self) -> Fraction:
        return Fraction(self.substreams, self.substreams + 1)

    @property
    def substream_rate(self) -> Fraction:
        return Fraction(1, self.substreams + 1)

    @property
    def supported_rate(self) -> Fraction:
        return Fraction(self.substreams) / (self.substreams + 1 - self.tolerance)

    @property
    def chain_min(self) -> int:
        return self.substreams - 1

    @property
    def chain_max(self) -> int:
        return max(1, 2 * self.substreams - 2)

    @property
    def balance_threshold(self) -> int:
        return 5 * self.substreams

    @property
    def records_per_substream(self) -> int:
        return self.memory_slots // self.substreams


#: One remembered ancestor: (ancestor, its tree parent, its redundant parent).
Record = tuple[NodeId, NodeId, Optional[NodeId]]


@dataclass
class SubstreamView:
    """What one peer holds for one substream."""

    label: Optional[Label] = None
    parent_tree: Optional[NodeId] = None
    parent_red: Optional[NodeId] = None
    child_primary: Optional[NodeId] = None
    child_secondary: Optional[NodeId] = None
    child_red: Optional[NodeId] = None  # SERVER on the end node, else a peer id
    ctrl_label: Optional[Label] = None
    ctrl_addr: Optional[NodeId] = None
    parent_balanced: bool = True
    balance_timer: int = 0
    records: list[Record] = field(default_factory=list)
    applied_stamps: set = field(default_factory=set)

    def tree_children(self) -> list[NodeId]:
        out = []
        if self.child_primary is not None:
            out.append(self.child_primary)
        if self.child_secondary is not None:
            out.append(self.child_secondary)
        return out

    def out_degree(self) -> int:
        return len(self.tree_children()) + (1 if self.child_red is not None else 0)

    def is_fork(self) -> bool:
        return self.child_primary is not None and self.child_secondary is not None

    def is_leaf(self) -> bool:
        return self.child_primary is None and self.child_secondary is None


class Peer:
    __slots__ = ("id", "views")

    def __init__(self, peer_id: NodeId, m: int):
        self.id = peer_id
        self.views = [SubstreamView() for _ in range(m)]

    def fork_substreams(self) -> list[int]:
        return [i for i, v in enumerate(self.views) if v.is_fork()]


class Overlay:
    """Global, omniscient view of all peers' substream state."""

    def __init__(self, m: int):
        self.m = m
        self.peers: dict[NodeId, Peer] = {}
        self.server_children: list[list[NodeId]] = [[] for _ in range(m)]
        self.round = 0
        self.peak_population = 0
        self.next_id = 1
        # Multi-source mode only: per-substream (end node, next root) pairs.
        self.exchange_edges: list[list[tuple[NodeId, NodeId]]] = [[] for _ in range(m)]

    # -- bookkeeping ------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.peers)

    @property
    def sentinel(self) -> Label:
        return self.n + 1

    def add_peer(self, peer_id: Optional[NodeId] = None) -> Peer:
        if peer_id is None:
            peer_id = self.next_id
        if peer_id in self.peers or peer_id == SERVER:
            raise OverlayError(f"peer id {peer_id} already in use")
        p = Peer(peer_id, self.m)
        self.peers[peer_id] = p
        self.next_id = max(self.next_id, peer_id + 1)
        self.peak_population = max(self.peak_population, self.n)
        return p

    def view(self, peer_id: NodeId, i: int) -> SubstreamView:
        return self.peers[peer_id].views[i]

    def root(self, i: int) -> Optional[NodeId]:
        return self.server_children[i][0] if self.server_children[i] else None

    def edges(self, i: int) -> Iterator[tuple[NodeId, NodeId, EdgeKind]]:
        """All edges of substream ``i`` including the server's."""
        for r in self.server_children[i]:
            yield (SERVER, r, EdgeKind.TREE_PRIMARY)
        for pid in sorted(self.peers):
            v = self.peers[pid].views[i]
            if v.child_primary is not None:
                yield (pid, v.child_primary, EdgeKind.TREE_PRIMARY)
            if v.child_secondary is not None:
                yield (pid, v.child_secondary, EdgeKind.TREE_SECONDARY)
            if v.child_red is not None:
                yield (pid, v.child_red, EdgeKind.REDUNDANT)

    def label_map(self, i: int) -> dict[Label, NodeId]:
        out = {}
        for pid, p in self.peers.items():
            lab = p.views[i].label
            if lab is not None:
                out[lab] = pid
        return out

    def structure_key(self):
        """Hashable fingerprint of topology plus labels (delta detection)."""
        per = []
        for i in range(self.m):
            es = tuple(sorted((a, b, k.value) for a, b, k in self.edges(i)))
            labs = tuple(
                sorted((pid, self.peers[pid].views[i].label) for pid in self.peers)
            )
            per.append((tuple(self.server_children[i]), es, labs))
        return tuple(per)

    # -- snapshot text format ---------------------------------------------
    #
    # One line per edge:   <substream> <from> <to> <kind>
    # one line per peer:   peer <id> <label_1> ... <label_m>
    # with the server written as "S" and substreams numbered from 1.

    def snapshot_text(self) -> str:
        lines = [f"treecast-snapshot m={self.m} round={self.round}"]
        name = lambda x: "S" if x == SERVER else str(x)
        for i in range(self.m):
            for a, b, k in self.edges(i):
                lines.append(f"{i + 1} {name(a)} {name(b)} {k.value}")
        for pid in sorted(self.peers):
            labs = " ".join(str(self.peers[pid].views[i].label) for i in range(self.m))
            lines.append(f"peer {pid} {labs}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_snapshot_text(cls, text: str) -> "Overlay":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        head = lines[0].split()
        if not head or head[0] != "treecast-snapshot":
            raise OverlayError("not a snapshot: missing header")
        kv = dict(part.split("=", 1) for part in head[1:])
        ov = cls(int(kv["m"]))
        ov.round = int(kv.get("round", 0))
        parse = lambda tok: SERVER if tok == "S" else int(tok)
        edge_lines = []
        for ln in lines[1:]:
            toks = ln.split()
            if toks[0] == "peer":
                pid = int(toks[1])
                if pid not in ov.peers:
                    ov.add_peer(pid)
                labs = toks[2:]
                if len(labs) != ov.m:
                    raise OverlayError(f"peer {pid}: expected {ov.m} labels")
                for i, tok in enumerate(labs):
                    ov.peers[pid].views[i].label = int(tok)
            else:
                edge_lines.append(toks)
        for toks in edge_lines:
            i = int(toks[0]) - 1
            a, b = parse(toks[1]), parse(toks[2])
            kind = EdgeKind(toks[3])
            for x in (a, b):
                if x != SERVER and x not in ov.peers:
                    ov.add_peer(x)
            if kind is EdgeKind.REDUNDANT:
                ov.peers[a].views[i].child_red = b
                if b != SERVER:
                    ov.peers[b].views[i].parent_red = a
            elif a == SERVER:
                ov.server_children[i].append(b)
                ov.peers[b].views[i].parent_tree = SERVER
            else:
                va = ov.peers[a].views[i]
                if kind is EdgeKind.TREE_PRIMARY:
                    va.child_primary = b
                else:
                    va.child_secondary = b
                ov.peers[b].views[i].parent_tree = a
        refresh_control(ov)
        return ov

    def clone(self) -> "Overlay":
        return Overlay.from_snapshot_text(self.snapshot_text())


# -- label geometry ---------------------------------------------------------


def subtree_range(label: Label, ctrl_label: Label) -> range:
    """Labels strictly inside a node's span: [label+1, ctrl_label-1]."""
    return range(label + 1, ctrl_label)


def canonical_labels(ov: Overlay, i: int, exclude=()) -> dict[NodeId, Label]:
    """Structure-derived labels: pre-order walk, primary subtree first.

    Raises OverlayError if the substream is not a single rooted tree over all
    live peers (``exclude`` names peers meant to be detached right now, e.g.
    mid-splice).
    """
    expected = ov.n - sum(1 for e in set(exclude) if e in ov.peers)
    if expected == 0:
        return {}
    root = ov.root(i)
    if root is None:
        raise OverlayError(f"substream {i + 1}: no server child")
    out: dict[NodeId, Label] = {}
    nxt = 1
    stack = [root]
    while stack:
        v = stack.pop()
        if v in out:
            raise OverlayError(f"substream {i + 1}: node {v} reached twice")
        out[v] = nxt
        nxt += 1
        view = ov.peers[v].views[i]
        if view.child_secondary is not None:
            stack.append(view.child_secondary)
        if view.child_primary is not None:
            stack.append(view.child_primary)
    if len(out) != expected:
        raise OverlayError(
            f"substream {i + 1}: tree covers {len(out)} of {expected} peers"
        )
    return out


def subtree_sizes(ov: Overlay, i: int) -> dict[NodeId, int]:
    """Size of every node's tree subtree (itself included), iteratively."""
    root = ov.root(i)
    sizes: dict[NodeId, int] = {}
    if root is None:
        return sizes
    peers = ov.peers
    order = []
    stack = [root]
    while stack:
        v = stack.pop()
        order.append(v)
        view = peers[v].views[i]
        if view.child_primary is not None:
            stack.append(view.child_primary)
        if view.child_secondary is not None:
            stack.append(view.child_secondary)
    for v in reversed(order):  # children always precede their parent
        view = peers[v].views[i]
        s = 1
        if view.child_primary is not None:
            s += sizes[view.child_primary]
        if view.child_secondary is not None:
            s += sizes[view.child_secondary]
        sizes[v] = s
    return sizes


def fork_balanced(ov: Overlay, i: int, fork_id: NodeId, sizes=None) -> bool:
    """Median test at a fork: the primary side holds floor(children/2) nodes."""
    view = ov.peers[fork_id].views[i]
    if not view.is_fork():
        return True
    if sizes is None:
        sizes = subtree_sizes(ov, i)
    p = sizes[view.child_primary]
    s = sizes[view.child_secondary]
    return p == (p + s) // 2


# -- safety checks ------------------------------------------------------------


@dataclass
class PropertyReport:
    ok: bool
    per_substream: list[bool]
    violations: list[str]
    unreachable: dict[int, list[NodeId]] = field(default_factory=dict)


def _directed_reach(ov: Overlay, i: int) -> set[NodeId]:
    seen: set[NodeId] = set()
    stack = list(ov.server_children[i])
    while stack:
        v = stack.pop()
        if v in seen or v == SERVER or v not in ov.peers:
            continue
        seen.add(v)
        view = ov.peers[v].views[i]
        for w in view.tree_children():
            stack.append(w)
        if view.child_red is not None and view.child_red != SERVER:
            stack.append(view.child_red)
    return seen


def check_property1(ov: Overlay) -> PropertyReport:
    """Server-to-all directed reachability, per substream."""
    per, unreach, viol = [], {}, []
    for i in range(ov.m):
        reach = _directed_reach(ov, i)
        missing = sorted(set(ov.peers) - reach)
        per.append(not missing)
        if missing:
            unreach[i] = missing
            viol.append(f"substream {i + 1}: unreachable {missing}")
    return PropertyReport(all(per), per, viol, unreach)


def check_property2(ov: Overlay) -> PropertyReport:
    """Degree discipline: out-degree in {1,2}; secondaries leaf-backed;
    at most one substream with out-degree two per peer."""
    per, viol = [], []
    for i in range(ov.m):
        ok = True
        for pid in sorted(ov.peers):
            v = ov.peers[pid].views[i]
            d = v.out_degree()
            if ov.n > 0 and d not in (1, 2):
                ok = False
                viol.append(f"substream {i + 1}: peer {pid} out-degree {d}")
            if v.child_secondary is not None:
                sec = ov.peers[v.child_secondary].views[i]
                back = sec.parent_red
                if back is None:
                    ok = False
                    viol.append(
                        f"substream {i + 1}: secondary child {v.child_secondary} lacks a redundant in-edge"
                    )
                elif not ov.peers[back].views[i].is_leaf():
                    ok = False
                    viol.append(
                        f"substream {i + 1}: redundant backing {back} of {v.child_secondary} is not a leaf"
                    )
        per.append(ok)
    for pid in sorted(ov.peers):
        forks = [
            i
            for i in range(ov.m)
            if len(ov.peers[pid].views[i].tree_children())
            + (1 if ov.peers[pid].views[i].child_red is not None else 0)
            == 2
        ]
        if len(forks) > 1:
            viol.append(f"peer {pid} has out-degree two in substreams {forks}")
            for i in forks:
                per[i] = False
    return PropertyReport(all(per), per, viol)


def _property2_ok(ov: Overlay) -> bool:
    """Boolean-only equivalent of ``check_property2(ov).ok`` (engine hot path)."""
    peers = ov.peers
    if not peers:
        return True
    for peer in peers.values():
        forked = 0
        for i, v in enumerate(peer.views):
            d = (
                (v.child_primary is not None)
                + (v.child_secondary is not None)
                + (v.child_red is not None)
            )
            if d == 2:
                forked += 1
                if forked > 1:
                    return False
            elif d != 1:
                return False
            if v.child_secondary is not None:
                b = peers[v.child_secondary].views[i].parent_red
                if b is None:
                    return False
                bv = peers[b].views[i]
                if bv.child_primary is not None or bv.child_secondary is not None:
                    return False
    return True


def tree_balance_violations(
    ov: Overlay, i: int, cfg: StreamConfig, sizes=None
) -> list[str]:
    """Per-tree balance discipline used both by the checker and by the
    induction-insert gate: fork medians exact, chain lengths inside
    [m-1, 2m-2] (the chain holding the end node and a chain hanging directly
    off the server are exempt from the lower bound), and no fork strictly
    below a degree-one node."""
    out: list[str] = []
    if ov.n == 0 or cfg.substreams == 1:
        return out  # one substream means plain chains; balance is vacuous
    root = ov.root(i)
    if root is None:
        return [f"substream {i + 1}: no root"]
    if sizes is None:
        sizes = subtree_sizes(ov, i)
    if len(sizes) != ov.n:
        return [f"substream {i + 1}: not a spanning tree"]
    for pid in sorted(ov.peers):
        v = ov.peers[pid].views[i]
        if v.is_fork() and not fork_balanced(ov, i, pid, sizes):
            p, s = sizes[v.child_primary], sizes[v.child_secondary]
            out.append(
                f"substream {i + 1}: fork {pid} unbalanced ({p} vs {s} below)"
            )
    # Chains: maximal runs of degree<=1 nodes starting below a fork/server.
    for pid in sorted(ov.peers):
        v = ov.peers[pid].views[i]
        if v.is_fork():
            continue
        par = v.parent_tree
        par_is_fork = par not in (None, SERVER) and ov.peers[par].views[i].is_fork()
        if not (par == SERVER or par_is_fork):
            continue  # not a chain head
        length = 0
        cur: Optional[NodeId] = pid
        is_tail = False
        while cur is not None:
            cv = ov.peers[cur].views[i]
            if cv.is_fork():
                out.append(
                    f"substream {i + 1}: fork {cur} below degree-one node"
                )
                break
            length += 1
            if cv.is_leaf():
                if cv.child_red == SERVER:
                    is_tail = True
                cur = None
            else:
                cur = cv.child_primary
        if length > cfg.chain_max:
            out.append(
                f"substream {i + 1}: chain at {pid} length {length} > {cfg.chain_max}"
            )
        if length < cfg.chain_min and not is_tail and par != SERVER:
            out.append(
                f"substream {i + 1}: chain at {pid} length {length} < {cfg.chain_min}"
            )
    return out


def tree_balanced(ov: Overlay, i: int, cfg: StreamConfig) -> bool:
    return not tree_balance_violations(ov, i, cfg)


def check_property3(ov: Overlay, cfg: StreamConfig) -> PropertyReport:
    """Properties 1 and 2 plus per-tree balance discipline."""
    p1 = check_property1(ov)
    p2 = check_property2(ov)
    per, viol = [], list(p1.violations) + list(p2.violations)
    for i in range(ov.m):
        bal = tree_balance_violations(ov, i, cfg) if p1.per_substream[i] else ["skipped"]
        per.append(p1.per_substream[i] and p2.per_substream[i] and not bal)
        if p1.per_substream[i]:
            viol.extend(bal)
    return PropertyReport(all(per), per, viol, p1.unreachable)


def is_steady_state(ov: Overlay, cfg: StreamConfig) -> bool:
    """Property 3 everywhere and every stored label already canonical."""
    if not check_property3(ov, cfg).ok:
        return False
    for i in range(ov.m):
        try:
            canon = canonical_labels(ov, i)
        except OverlayError:
            return False
        for pid, lab in canon.items():
            if ov.peers[pid].views[i].label != lab:
                return False
    return True


# -- control labels and address records ---------------------------------------


def refresh_control(ov: Overlay, sizes_by_tree=None) -> None:
    """Top-down pass setting every view's control pair (the label one past its
    span plus the address holding it) and the parent-balance bit, the way the
    per-round forwarding piggybacks them."""
    for i in range(ov.m):
        root = ov.root(i)
        if root is None:
            continue
        sizes = sizes_by_tree.get(i) if sizes_by_tree else None
        if sizes is None:
            sizes = subtree_sizes(ov, i)
        rv = ov.peers[root].views[i]
        rv.ctrl_label = ov.sentinel
        rv.ctrl_addr = SERVER
        rv.parent_balanced = True
        stack = [root]
        while stack:
            v = stack.pop()
            view = ov.peers[v].views[i]
            balanced = fork_balanced(ov, i, v, sizes)
            if view.is_fork():
                sec = view.child_secondary
                pv = ov.peers[view.child_primary].views[i]
                pv.ctrl_label = ov.peers[sec].views[i].label
                pv.ctrl_addr = sec
                pv.parent_balanced = balanced
                sv = ov.peers[sec].views[i]
                sv.ctrl_label = view.ctrl_label
                sv.ctrl_addr = view.ctrl_addr
                sv.parent_balanced = balanced
                stack.extend((view.child_primary, sec))
            else:
                # Degree-one (either slot, transients included): pass through.
                for c in view.tree_children():
                    cv = ov.peers[c].views[i]
                    cv.ctrl_label = view.ctrl_label
                    cv.ctrl_addr = view.ctrl_addr
                    cv.parent_balanced = balanced
                    stack.append(c)


def cycle_successor(view: SubstreamView) -> Optional[NodeId]:
    """Next peer on the substream cycle, or None at the end node.  This is
    always a direct out-neighbor: the primary child, else the redundant
    target, else (primary subtree empty) the secondary child."""
    if view.child_primary is not None:
        return view.child_primary
    if view.child_red is not None:
        return None if view.child_red == SERVER else view.child_red
    return view.child_secondary


def refresh_records(ov: Overlay, cfg: StreamConfig) -> None:
    """Per-round address-memory refresh.  Walking the cycle from the root,
    every peer hands its successor a fresh record of itself stacked on top of
    its own just-refreshed list, capped at the per-substream budget.  One
    round therefore re-fills the whole list."""
    k = cfg.records_per_substream
    for i in range(ov.m):
        root = ov.root(i)
        if root is None:
            continue
        prev: Optional[NodeId] = None
        v: Optional[NodeId] = root
        seen = 0
        while v is not None and seen <= ov.n:
            seen += 1
            view = ov.peers[v].views[i]
            if prev is None:
                view.records = []
            else:
                uv = ov.peers[prev].views[i]
                up_tree = uv.parent_tree if uv.parent_tree is not None else SERVER
                view.records = [(prev, up_tree, uv.parent_red)] + uv.records[: k - 1]
            prev = v
            v = cycle_successor(view)


# -- construction --------------------------------------------------------------


def _split_shape(n: int, m: int) -> tuple[dict, dict, dict]:
    """First-tree shape over positions 1..n: (primary, secondary, parent)."""
    prim: dict[int, int] = {}
    sec: dict[int, int] = {}
    par: dict[int, int] = {}

    def split(v: int, end: int) -> None:
        span = end - v
        if m == 1 or span <= max(1, 2 * m - 2):
            for x in range(v, end - 1):
                prim[x] = x + 1
                par[x + 1] = x
            return
        s = -((-(v + end)) // 2)  # ceil((v+end)/2)
        prim[v] = v + 1
        par[v + 1] = v
        sec[v] = s
        par[s] = v
        split(v + 1, s)
        split(s, end)

    if n >= 1:
        split(1, n + 1)
    return prim, sec, par


def _rotation_source(prim, sec, par, n: int) -> dict[int, int]:
    """Position map src: the occupant of p in tree j+1 is tree j's occupant of
    src(p).  Fork cycles: each fork plus the chain backing its secondary child
    rotate by one; everything else (the tail chain) is fixed."""
    src = {p: p for p in range(1, n + 1)}
    for f, s in sec.items():
        leaf = s - 1
        chain = [leaf]
        while True:
            up = par.get(chain[-1])
            if up is None or up in sec or up == f:
                break
            chain.append(up)
        chain.reverse()  # head .. leaf
        src[f] = chain[0]
        for a, b in zip(chain, chain[1:]):
            src[a] = b
        src[chain[-1]] = f
    return src


def bootstrap_steady(cfg: StreamConfig) -> Overlay:
    """Build the canonical steady overlay: tree 1 by recursive median
    splitting, trees 2..m by rotating each fork cycle one step per tree."""
    n, m = cfg.n_initial, cfg.substreams
    ov = Overlay(m)
    if n == 0:
        return ov
    for pid in range(1, n + 1):
        ov.add_peer(pid)
    prim, sec, par = _split_shape(n, m)
    src = _rotation_source(prim, sec, par, n)
    leaves = [p for p in range(1, n + 1) if p not in prim]
    occ = {p: p for p in range(1, n + 1)}
    for i in range(m):
        if i > 0:
            occ = {p: occ[src[p]] for p in occ}
        for p in range(1, n + 1):
            view = ov.peers[occ[p]].views[i]
            view.label = p
            view.parent_tree = SERVER if p == 1 else occ[par[p]]
            view.child_primary = occ[prim[p]] if p in prim else None
            view.child_secondary = occ[sec[p]] if p in sec else None
            view.child_red = None
            view.parent_red = None
        ov.server_children[i] = [occ[1]]
        for x in leaves:
            xv = ov.peers[occ[x]].views[i]
            if x == n:
                xv.child_red = SERVER
            else:
                xv.child_red = occ[x + 1]
                ov.peers[occ[x + 1]].views[i].parent_red = occ[x]
    refresh_control(ov)
    refresh_records(ov, cfg)
    return ov


# -- delay measurement ---------------------------------------------------------


@dataclass
class DelayReport:
    overall: int
    per_peer: dict[NodeId, tuple[int, ...]]


def _substream_csr(ov: Overlay, i: int, index: dict[NodeId, int], promoted=()):
    edges = []
    for a, b, kind in ov.edges(i):
        if b == SERVER:
            continue
        cost = 1 if kind is EdgeKind.REDUNDANT or (a, b, i) in promoted else 0
        edges.append((index[a], index[b], cost))
    return _kernels.build_csr(len(index), edges)


def node_index(ov: Overlay) -> dict[NodeId, int]:
    idx = {SERVER: 0}
    for pid in sorted(ov.peers):
        idx[pid] = len(idx)
    return idx


def measure_delay(ov: Overlay) -> DelayReport:
    """Max over peers and substreams of the hop distance from the server
    (the server hop included; redundant edges count like any hop)."""
    if ov.n == 0:
        return DelayReport(0, {})
    idx = node_index(ov)
    ids = sorted(ov.peers)
    hops = np.empty((ov.m, len(idx)), np.int64)
    for i in range(ov.m):
        indptr, targets, _ = _substream_csr(ov, i, idx)
        hops[i] = _kernels.bfs_hops(indptr, targets, len(idx), 0)
    per = {pid: tuple(int(hops[i][idx[pid]]) for i in range(ov.m)) for pid in ids}
    worst = max((h for hs in per.values() for h in hs), default=0)
    return DelayReport(int(worst), per)
