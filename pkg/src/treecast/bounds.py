"""Closed-form delay bounds and degree-profile feasibility checks.

Rational parts are kept exact as ``fractions.Fraction``; only the logarithms
go through floats.  All public evaluators take the stream rate R (in units of
the unit-capacity uplink) rather than the substream count, so they also apply
to rates that do not come from an integer redundancy split.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

__all__ = [
    "BoundQuery",
    "ConverseBound",
    "DegreeProfile",
    "FeasibilityReport",
    "allcast_delay_bound",
    "bounds_table",
    "brute_force_min_depth",
    "converse_feasibility_check",
    "delay_bound_tolerance",
    "delay_lower_bound_converse",
    "delay_upper_bound",
    "depth_lower_bound",
    "parse_grid",
    "supported_rate_tolerance",
]


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(str(x))


@dataclass(frozen=True)
class BoundQuery:
    n: int
    rate: Fraction
    capacity: Fraction = Fraction(1)
    tolerance: Fraction = Fraction(0)
    degree_bound: int = 2


def delay_upper_bound(n: int, rate, capacity=Fraction(1)) -> float:
    """Achievable worst-case delay of the maintained overlay family."""
    r, c = _frac(rate), _frac(capacity)
    if not 0 < r < c:
        raise ValueError("need 0 < rate < capacity")
    return (
        math.log2(n + 1)
        + 2 * float(r / (c - r))
        + math.log2(1 - float(r / c))
        - 2
    )


@dataclass(frozen=True)
class ConverseBound:
    value: float
    constant: float
    hypothesis_ok: bool
    threshold: Fraction


def delay_lower_bound_converse(
    n: int, rate, capacity=Fraction(1), degree_bound: int = 2
) -> ConverseBound:
    """No overlay with the given degree bound can beat this delay.  The
    derivation needs n at least 3R/(C-R); smaller populations are evaluated
    anyway and flagged."""
    r, c = _frac(rate), _frac(capacity)
    d = degree_bound
    if d < 2:
        raise ValueError("degree_bound must be >= 2")
    logd = lambda x: math.log(float(x)) / math.log(d)
    const = (d - 2) * logd(Fraction(math.factorial(d), 2)) + math.log(d - 1) + 2
    value = (
        logd(n)
        + float(r / (2 * (c - r)))
        + logd(2 * (c - r) / r)
        - const
    )
    threshold = 3 * r / (c - r)
    return ConverseBound(value, const, Fraction(n) >= threshold, threshold)


def delay_bound_tolerance(n: int, rate, tolerance) -> float:
    """Delay bound when every edge may independently drop a tolerance
    fraction: the effective redundancy shrinks to R(1-tau)/(1-R)."""
    r, t = _frac(rate), _frac(tolerance)
    eff = r * (1 - t) / (1 - r)
    return math.log2(n + 1) - math.log2(float(eff) + 1) + 2 * float(eff) - 2


def supported_rate_tolerance(substreams: int, tolerance) -> Fraction:
    """Exact stream rate sustained with one substream degraded: m/(m+1-tau)."""
    t = _frac(tolerance)
    return Fraction(substreams) / (substreams + 1 - t)


def allcast_delay_bound(n: int, rate) -> float:
    """Round bound for every-peer-to-every-peer flooding over the undirected
    substream structures."""
    r = _frac(rate)
    return 2 * math.log2(n + 1) + 8 * float(r / (1 - r)) + 2 * math.log2(1 - float(r)) - 8


# -- degree profiles -----------------------------------------------------------


@dataclass(frozen=True)
class DegreeProfile:
    """Fraction of peers having each out-degree (index = degree)."""

    n: int
    fractions: tuple

    def __post_init__(self):
        fr = tuple(_frac(f) for f in self.fractions)
        object.__setattr__(self, "fractions", fr)
        if sum(fr, Fraction(0)) != 1:
            raise ValueError("degree fractions must sum to one")
        if any(f < 0 for f in fr):
            raise ValueError("degree fractions must be nonnegative")

    @property
    def edge_identity(self) -> Fraction:
        return sum((j * f for j, f in enumerate(self.fractions)), Fraction(0))

    @property
    def counts(self) -> tuple:
        out = []
        for f in self.fractions:
            c = f * self.n
            if c.denominator != 1:
                raise ValueError(f"degree count {f} * {self.n} is not integral")
            out.append(int(c))
        return tuple(out)

    @property
    def max_degree(self) -> int:
        degs = [j for j, f in enumerate(self.fractions) if f > 0]
        return max(degs) if degs else 0


def depth_lower_bound(profile: DegreeProfile) -> float:
    """Counting bound on the depth of any tree realizing the profile."""
    fr = profile.fractions
    if not fr or fr[0] == 0:
        raise ValueError("a tree needs leaves: degree-0 fraction must be positive")
    fanout = max(profile.max_degree, 2)
    d0, d1 = fr[0], fr[1] if len(fr) > 1 else Fraction(0)
    heavy = sum(
        (profile.n * f * (j - 1) for j, f in enumerate(fr) if j >= 2), Fraction(0)
    )
    logl = lambda x: math.log(float(x)) / math.log(fanout)
    return (
        float(d1 / d0)
        + logl(1 + heavy)
        - (fanout - 2) * logl(Fraction(math.factorial(fanout), 2))
    )


def brute_force_min_depth(profile: DegreeProfile) -> int:
    """Exact minimal depth (tree edges) over trees realizing the profile.

    Requires the profile to be realizable: integral counts summing to n with
    exactly n-1 tree out-edges.  Placing the largest degrees closest to the
    root level by level is optimal (any swap moving a larger degree downward
    can only shrink the slots available early), so the greedy layering is
    exact.
    """
    counts = list(profile.counts)
    n = profile.n
    if sum(counts) != n:
        raise ValueError("counts do not sum to n")
    edges = sum(j * c for j, c in enumerate(counts))
    if edges != n - 1:
        raise ValueError(
            f"profile has {edges} tree edges, a tree over {n} nodes needs {n - 1}"
        )
    remaining = n
    slots = 1
    depth = -1
    while remaining:
        if slots <= 0:
            raise ValueError("profile not realizable: ran out of slots")
        take = min(slots, remaining)
        produced = 0
        left = take
        for j in range(len(counts) - 1, -1, -1):
            use = min(left, counts[j])
            counts[j] -= use
            produced += use * j
            left -= use
            if left == 0:
                break
        remaining -= take
        slots = produced
        depth += 1
    return depth


@dataclass(frozen=True)
class FeasibilityReport:
    ok: bool
    sum_ok: bool
    identity_ok: bool
    capacity_ok: bool
    leaf_ok: bool
    capacity_used: Fraction
    min_leaf_fraction: Fraction
    leaf_threshold: Fraction


def converse_feasibility_check(
    profiles: Sequence[DegreeProfile],
    rates: Sequence,
    rate,
    capacity=Fraction(1),
) -> FeasibilityReport:
    """The three constraints any rate-R overlay's per-substream degree
    profiles must satisfy: fractions sum to one, tree-edge identity within the
    1/n closure slack, total forwarding within capacity, and somebody's leaf
    fraction below 1/R - 1 + 2/n."""
    if len(profiles) != len(rates):
        raise ValueError("one rate per profile required")
    r, c = _frac(rate), _frac(capacity)
    rs = [_frac(x) for x in rates]
    n = profiles[0].n
    slack = Fraction(1, n)
    sum_ok = True  # enforced by the DegreeProfile constructor
    identity_ok = all(abs(p.edge_identity - (1 - slack)) <= slack for p in profiles)
    used = Fraction(0)
    for p, ri in zip(profiles, rs):
        heavy = sum(
            ((j - 1) * f for j, f in enumerate(p.fractions) if j >= 2), Fraction(0)
        )
        used += (1 - slack + heavy) * ri
    capacity_ok = used <= c
    min_leaf = min(p.fractions[0] for p in profiles)
    threshold = 1 / r - 1 + Fraction(2, n)
    leaf_ok = min_leaf <= threshold
    return FeasibilityReport(
        sum_ok and identity_ok and capacity_ok and leaf_ok,
        sum_ok,
        identity_ok,
        capacity_ok,
        leaf_ok,
        used,
        min_leaf,
        threshold,
    )


# -- grid parsing and table rendering ------------------------------------------

_GRID_KEYS = {
    "n": "n",
    "m": "m",
    "r": "rate",
    "rate": "rate",
    "tau": "tolerance",
    "tolerance": "tolerance",
    "delta": "degree_bound",
    "degree": "degree_bound",
}


def _parse_values(text: str) -> list[Fraction]:
    out: list[Fraction] = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            span, _, step = part.partition(":")
            lo, _, hi = span.partition("..")
            if not step:
                raise ValueError(f"sweep '{part}' needs a :step")
            a, b, s = Fraction(lo), Fraction(hi), Fraction(step)
            v = a
            while v <= b:
                out.append(v)
                v += s
        else:
            out.append(Fraction(part))
    return out


def parse_grid(text: str) -> list[BoundQuery]:
    """Parse grids like ``n=11,50;m=3;tau=0..1:0.25;delta=2`` into queries."""
    fields: dict[str, list[Fraction]] = {}
    for chunk in filter(None, (c.strip() for c in text.split(";"))):
        key, _, vals = chunk.partition("=")
        key = key.strip().lower()
        if key not in _GRID_KEYS:
            raise ValueError(f"unknown grid key '{key}'")
        fields[_GRID_KEYS[key]] = _parse_values(vals)
    if "n" not in fields:
        raise ValueError("grid needs at least n=...")
    if "rate" not in fields:
        ms = fields.get("m", [Fraction(3)])
        fields["rate"] = [Fraction(m, m + 1) for m in ms]
    ns = [int(v) for v in fields["n"]]
    taus = fields.get("tolerance", [Fraction(0)])
    deltas = [int(v) for v in fields.get("degree_bound", [Fraction(2)])]
    out = []
    for n, r, t, d in itertools.product(ns, fields["rate"], taus, deltas):
        out.append(BoundQuery(n=n, rate=r, tolerance=t, degree_bound=d))
    return out


def bounds_table(queries: Iterable[BoundQuery]) -> str:
    """Fixed-width table of every bound for every query; converse rows whose
    population is below the hypothesis threshold are marked, not dropped."""
    rows = [
        f"{'n':>7} {'R':>6} {'tau':>6} {'delta':>5} "
        f"{'upper':>11} {'tol-bound':>11} {'converse':>16} {'supported':>10}"
    ]
    for q in queries:
        up = delay_upper_bound(q.n, q.rate, q.capacity)
        tol = delay_bound_tolerance(q.n, q.rate, q.tolerance)
        cv = delay_lower_bound_converse(q.n, q.rate, q.capacity, q.degree_bound)
        cv_cell = f"{cv.value:.6f}" + ("" if cv.hypothesis_ok else " hyp!")
        m = q.rate / (1 - q.rate)
        if m.denominator == 1:
            sup = str(supported_rate_tolerance(int(m), q.tolerance))
        else:
            sup = "-"
        rows.append(
            f"{q.n:>7} {str(q.rate):>6} {str(q.tolerance):>6} {q.degree_bound:>5} "
            f"{up:>11.6f} {tol:>11.6f} {cv_cell:>16} {sup:>10}"
        )
    return "\n".join(rows)
