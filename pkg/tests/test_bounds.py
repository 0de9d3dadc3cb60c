"""Bound formula tests.

Every numeric oracle below was computed once from the closed forms typed out
independently (script kept in the project notes), then frozen here.  The
implementation must match to 1e-9 unless stated tighter.
"""

import math
from fractions import Fraction as F
from functools import lru_cache

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treecast.bounds import (
    BoundQuery,
    DegreeProfile,
    allcast_delay_bound,
    bounds_table,
    brute_force_min_depth,
    converse_feasibility_check,
    delay_bound_tolerance,
    delay_lower_bound_converse,
    delay_upper_bound,
    depth_lower_bound,
    parse_grid,
    supported_rate_tolerance,
)

EPS = 1e-9
R34 = F(3, 4)


def test_upper_bound_frozen_values():
    assert delay_upper_bound(11, R34) == pytest.approx(5.584962500721156, abs=EPS)
    assert delay_upper_bound(1023, R34) == pytest.approx(12.0, abs=EPS)
    assert delay_upper_bound(11, F(2, 3)) == pytest.approx(4.0, abs=EPS)
    assert delay_upper_bound(4, F(2, 3)) == pytest.approx(2.7369655941662057, abs=EPS)
    assert delay_upper_bound(1023, F(4, 5)) == pytest.approx(13.678071905112638, abs=EPS)


def test_converse_frozen_values():
    cb = delay_lower_bound_converse(11, R34, degree_bound=2)
    assert cb.constant == pytest.approx(2.0, abs=EPS)
    assert cb.value == pytest.approx(2.374469117916142, abs=EPS)
    assert cb.hypothesis_ok  # 11 >= 3R/(C-R) = 9
    assert cb.threshold == 9
    cb3 = delay_lower_bound_converse(11, R34, degree_bound=3)
    assert cb3.constant == pytest.approx(3.6931471805599454, abs=EPS)
    assert cb3.value == pytest.approx(-0.37955908834435004, abs=EPS)
    assert not delay_lower_bound_converse(4, R34, degree_bound=2).hypothesis_ok


def test_tolerance_bound_frozen_values():
    assert delay_bound_tolerance(11, R34, F(0)) == pytest.approx(
        delay_upper_bound(11, R34), abs=1e-12
    )
    assert delay_bound_tolerance(11, R34, F(1, 4)) == pytest.approx(
        4.3845227825800634, abs=EPS
    )
    assert delay_bound_tolerance(11, R34, F(1, 2)) == pytest.approx(
        3.2630344058337934, abs=EPS
    )
    assert delay_bound_tolerance(11, R34, F(1)) == pytest.approx(
        1.584962500721156, abs=EPS
    )


def test_tolerance_sweep_is_nonincreasing():
    taus = [F(k, 20) for k in range(21)]
    vals = [delay_bound_tolerance(50, R34, t) for t in taus]
    assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))


def test_supported_rate_exact():
    assert supported_rate_tolerance(3, F(0)) == F(3, 4)
    assert supported_rate_tolerance(3, F(1, 4)) == F(3) / F(15, 4) == F(4, 5)
    assert supported_rate_tolerance(3, F(1, 2)) == F(6, 7)
    assert supported_rate_tolerance(3, F(1)) == F(1)
    assert supported_rate_tolerance(2, F(1, 2)) == F(4, 5)


def test_allcast_bound_frozen_values():
    assert allcast_delay_bound(11, R34) == pytest.approx(19.169925001442312, abs=EPS)
    assert allcast_delay_bound(50, R34) == pytest.approx(23.344850683942994, abs=EPS)
    assert allcast_delay_bound(200, R34) == pytest.approx(27.302103382357856, abs=EPS)


def test_degree_profile_validation():
    p = DegreeProfile(11, (F(3, 11), F(5, 11), F(3, 11)))
    assert p.edge_identity == F(1)  # closure convention counts the n cycle edges
    with pytest.raises(ValueError):
        DegreeProfile(11, (F(1, 2), F(1, 4)))  # does not sum to one
    tree = DegreeProfile(11, (F(4, 11), F(4, 11), F(3, 11)))
    assert tree.edge_identity == F(10, 11)  # == 1 - 1/n exactly
    assert tree.counts == (4, 4, 3)


def test_depth_lower_bound_frozen_values():
    closure = DegreeProfile(11, (F(3, 11), F(5, 11), F(3, 11)))
    tree = DegreeProfile(11, (F(4, 11), F(4, 11), F(3, 11)))
    assert depth_lower_bound(closure) == pytest.approx(3.666666666666667, abs=EPS)
    assert depth_lower_bound(tree) == pytest.approx(3.0, abs=EPS)


def test_brute_force_min_depth_frozen_values():
    binary7 = DegreeProfile(7, (F(4, 7), F(0), F(3, 7)))
    chain5 = DegreeProfile(5, (F(1, 5), F(4, 5)))
    tree11 = DegreeProfile(11, (F(4, 11), F(4, 11), F(3, 11)))
    assert brute_force_min_depth(binary7) == 2
    assert brute_force_min_depth(chain5) == 4
    assert brute_force_min_depth(tree11) == 3
    with pytest.raises(ValueError):
        # closure profile: degree sum n+3-1 exceeds the n-1 tree edges
        brute_force_min_depth(DegreeProfile(11, (F(3, 11), F(5, 11), F(3, 11))))


def _reference_min_depth(counts):
    """Independent memoized search over level assignments (small n only)."""

    @lru_cache(maxsize=None)
    def best(remaining, slots):
        if not any(remaining):
            return -1  # depth counts the last occupied level
        if slots == 0:
            return None
        result = None
        # choose how many of each degree to place on this level
        def choices(idx, left, rem, produced):
            if idx == len(rem):
                yield rem, produced
                return
            for take in range(0, min(left, rem[idx]) + 1):
                nxt = list(rem)
                nxt[idx] -= take
                yield from choices(idx + 1, left - take, tuple(nxt), produced + take * idx)

        placed_any = False
        for rem, produced in choices(0, slots, remaining, 0):
            if rem == remaining:
                continue
            placed_any = True
            sub = best(rem, produced)
            if sub is not None:
                cand = 1 + sub
                result = cand if result is None else min(result, cand)
        if not placed_any:
            return None
        return result

    out = best(tuple(counts), 1)
    if out is None:
        raise ValueError("unrealizable")
    return out


@settings(max_examples=30, deadline=None)
@given(d2=st.integers(0, 3), d1=st.integers(0, 4))
def test_brute_force_matches_reference_search(d2, d1):
    d0 = d2 + 1
    n = d0 + d1 + d2
    counts = (d0, d1, d2)
    prof = DegreeProfile(n, tuple(F(c, n) for c in counts))
    assert brute_force_min_depth(prof) == _reference_min_depth(counts)


def test_depth_bound_never_exceeds_brute_force():
    # exhaustive over realizable (d0, d1, d2) with n <= 12 (the acceptance grid)
    for d2 in range(0, 6):
        d0 = d2 + 1
        for d1 in range(0, 12):
            n = d0 + d1 + d2
            if not (1 <= n <= 12):
                continue
            prof = DegreeProfile(n, tuple(F(c, n) for c in (d0, d1, d2)))
            assert brute_force_min_depth(prof) >= depth_lower_bound(prof) - EPS


def test_converse_feasibility_reference():
    closure = DegreeProfile(11, (F(3, 11), F(5, 11), F(3, 11)))
    rep = converse_feasibility_check(
        [closure] * 3, [F(1, 4)] * 3, rate=R34, capacity=F(1)
    )
    assert rep.ok
    assert rep.capacity_used == F(39, 44)
    assert rep.min_leaf_fraction == F(3, 11)
    assert rep.leaf_threshold == F(17, 33)  # 1/R - 1 + 2/n = 0.5151...
    assert float(rep.leaf_threshold) == pytest.approx(0.5151515151515151, abs=EPS)
    # overloaded rates must trip the capacity constraint
    bad = converse_feasibility_check([closure] * 3, [F(1, 3)] * 3, rate=R34)
    assert not bad.ok and not bad.capacity_ok


def test_bounds_table_and_grid():
    qs = parse_grid("n=11,1023;m=3;tau=0;delta=2")
    assert len(qs) == 2
    assert qs[0] == BoundQuery(n=11, rate=R34, tolerance=F(0), degree_bound=2)
    text = bounds_table(qs)
    assert "5.584963" in text and "12.000000" in text
    assert "2.374469" in text
    # hypothesis-failing rows stay, marked
    small = bounds_table(parse_grid("n=4;m=3;delta=2"))
    assert "hyp!" in small
    # tau sweep syntax
    sweep = parse_grid("n=11;m=3;tau=0..1:0.25")
    assert [q.tolerance for q in sweep] == [F(0), F(1, 4), F(1, 2), F(3, 4), F(1)]
    with pytest.raises(ValueError):
        parse_grid("")
    with pytest.raises(ValueError):
        parse_grid("n=11;bogus=3")


@settings(max_examples=50, deadline=None)
@given(
    n=st.integers(3, 10**6),
    m=st.integers(1, 9),
)
def test_upper_bound_dominates_log(n, m):
    # the bound is log2(n+1) + const(m); it must grow with n and with m
    r = F(m, m + 1)
    v = delay_upper_bound(n, r)
    assert v >= math.log2(n + 1) - 2  # constant part is >= -2 for C=1
    assert delay_upper_bound(n + 1, r) >= v - 1e-12
