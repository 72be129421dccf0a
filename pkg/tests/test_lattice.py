import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rcoda.lattice import Order, build_geometry, build_plan, default_T


def test_first_order_neighbourhood():
    g = build_geometry(3, 3, "first")
    assert sorted(g.neighbours_of(1, 1)) == [(0, 1), (1, 0), (1, 2), (2, 1)]
    assert sorted(g.neighbours_of(0, 0)) == [(0, 1), (1, 0)]
    assert g.n_edges == 12


def test_second_order_neighbourhood():
    g = build_geometry(3, 3, "second")
    assert len(g.neighbours_of(1, 1)) == 8
    assert sorted(g.neighbours_of(0, 0)) == [(0, 1), (1, 0), (1, 1)]
    # 12 axial + 8 diagonal
    assert g.n_edges == 20


@pytest.mark.parametrize("rows,cols", [(1, 1), (1, 5), (4, 7), (6, 6)])
def test_edge_count_formula(rows, cols):
    axial = rows * (cols - 1) + cols * (rows - 1)
    diag = 2 * (rows - 1) * (cols - 1)
    assert build_geometry(rows, cols, "first").n_edges == axial
    assert build_geometry(rows, cols, "second").n_edges == axial + diag


def test_default_depths():
    for order in Order:
        assert [default_T(build_geometry(n, n, order)) for n in (32, 128, 256)] == [6, 10, 12]


def test_first_order_4x4_level_one():
    plan = build_plan(build_geometry(4, 4, "first"), 1)
    lv = plan.levels[0]
    assert len(lv.conditioned) == 8 and len(lv.remainder) == 8
    assert plan.terminal_geometry.shape == (4, 3)
    assert plan.terminal_geometry.n_sites == 8


def test_second_order_class_sizes():
    d = build_plan(build_geometry(6, 6, "second"), 1).to_dict()
    assert d["levels"][0]["class_sizes"] == [9, 9, 9, 9]


def test_second_order_shapes():
    d = build_plan(build_geometry(6, 6, "second"), 1).to_dict()
    assert d["levels"][0]["next_shape"] == [6, 3]
    plan = build_plan(build_geometry(8, 8, "second"), 2)
    assert plan.terminal_geometry.shape == (4, 4)
    # spacing doubled along both axes
    assert plan.terminal_index_map.tolist() == [[r * 8 + c for c in range(0, 8, 2)] for r in range(0, 8, 2)]


def test_too_deep_names_limit():
    with pytest.raises(ValueError, match="maximum feasible T is 4"):
        build_plan(build_geometry(4, 4, "first"), 50)


def _positions(index_map):
    rr, cc = np.nonzero(index_map >= 0)
    return {int(index_map[r, c]): (int(r), int(c)) for r, c in zip(rr, cc)}


def _edge_set(geometry, index_map):
    flat = index_map.ravel()
    return {frozenset((int(flat[a]), int(flat[b]))) for a, b in geometry.edges}


def _expected_next_adjacent(d, order, axis):
    dr, dc = d
    if order is Order.FIRST:
        return abs(dr) == 1 and abs(dc) == 1
    da, do = (dc, dr) if axis == 1 else (dr, dc)
    return da % 2 == 0 and max(abs(da) // 2, abs(do)) == 1


def check_plan(rows, cols, order):
    geom = build_geometry(rows, cols, order)
    plan = build_plan(geom)
    covered = []
    for lv in plan.levels:
        level_sites = set(_positions(lv.index_map))
        cond = set(lv.conditioned.tolist())
        c2 = set(lv.class2.tolist()) if lv.class2 is not None else set()
        rem = set(lv.remainder.tolist())
        # partition of the level lattice
        assert cond | c2 | rem == level_sites
        assert not (cond & c2) and not (cond & rem) and not (c2 & rem)
        assert set(_positions(lv.next_index_map)) == rem
        edges = _edge_set(lv.geometry, lv.index_map)
        # coding classes are independent sets
        for cls in (cond, c2):
            assert not any(frozenset(p) in edges for p in itertools.combinations(cls, 2))
        # class 1 conditions on its full neighbourhood
        for site, nb in zip(lv.conditioned, lv.cond_neighbours):
            full = {b for e in edges if site in e for b in e if b != site}
            assert set(nb[nb >= 0].tolist()) == full
        # remainder remap preserves the induced diagonal / strided adjacency
        pos = _positions(lv.index_map)
        nxt = _edge_set(lv.next_geometry, lv.next_index_map)
        for a, b in itertools.combinations(sorted(rem), 2):
            d = (pos[b][0] - pos[a][0], pos[b][1] - pos[a][1])
            assert (frozenset((a, b)) in nxt) == _expected_next_adjacent(d, geom.order, lv.halved_axis)
        covered += list(cond | c2)
    covered += plan.terminal_sites.tolist()
    assert sorted(covered) == list(range(rows * cols))


@pytest.mark.parametrize("order", ["first", "second"])
def test_plan_invariants_exhaustive(order):
    for rows in range(1, 13):
        for cols in range(1, 13):
            check_plan(rows, cols, order)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20), st.sampled_from(["first", "second"]))
def test_plan_invariants_random(rows, cols, order):
    check_plan(rows, cols, order)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(2, 40), st.sampled_from(["first", "second"]))
def test_default_T_terminal_small(rows, cols, order):
    plan = build_plan(build_geometry(rows, cols, order))
    r, c = plan.terminal_geometry.shape
    assert r <= 4 and c <= 4 or plan.T == 0 and max(rows, cols) <= 4


def test_sublattice_field_matches_index_map():
    plan = build_plan(build_geometry(8, 8, "first"), 2)
    z = np.arange(64).reshape(8, 8)
    sub = plan.sublattice_field(z, 1)
    imap = plan.level_index_map(1)
    assert np.array_equal(sub[imap >= 0], imap[imap >= 0])
