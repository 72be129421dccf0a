import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rcoda.lattice import build_geometry, build_plan
from rcoda.likelihood import (
    IncompatibleBackend,
    ModelParams,
    PatternTable,
    RangeError,
    RcodaLikelihood,
    TdiTable,
    build_tdi_table,
    conditional_block_loglik,
    make_likelihood,
    pseudo_loglik,
    rcoda_loglik_first,
    rcoda_loglik_second,
    tdi_loglik,
)
from rcoda.potts import PottsModel, exact_log_likelihood

import oracles

fields = st.tuples(st.integers(2, 4), st.integers(2, 4), st.integers(2, 3), st.sampled_from(["first", "second"]),
                   st.integers(0, 2**32 - 1))


def _field(rows, cols, q, seed):
    return np.random.default_rng(seed).integers(0, q, (rows, cols))


@settings(max_examples=40, deadline=None)
@given(fields, st.floats(0, 2))
def test_full_conditionals_normalise(spec, beta):
    rows, cols, q, order, seed = spec
    g = build_geometry(rows, cols, order)
    z = _field(rows, cols, q, seed).ravel()
    site = int(np.random.default_rng(seed).integers(rows * cols))
    total = 0.0
    for s in range(q):
        w = z.copy()
        w[site] = s
        total += np.exp(conditional_block_loglik(w, [site], g.neighbours[[site]], beta, q))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_beta_zero_all_backends_agree():
    rng = np.random.default_rng(0)
    for order in ("first", "second"):
        g = build_geometry(4, 4, order)
        z = rng.integers(0, 3, (4, 4))
        table = build_tdi_table(g, 3, [0.0, 0.1], sweeps=50, burn_in=10)
        want = -16 * np.log(3)
        backends = ["exact", "pl", "tdi"] + (["rcoda"] if order == "first" else ["rcoda-m", "rcoda-c"])
        for b in backends:
            for T in (0, 1, 2):
                lik = make_likelihood(b, z, g, 3, T=T, table=table)
                assert lik(0.0, 0.7) == pytest.approx(want, abs=1e-12), (b, T)


@settings(max_examples=25, deadline=None)
@given(fields, st.floats(0.05, 1.5), st.floats(0, 1), st.randoms(use_true_random=False))
def test_relabel_invariance(spec, beta, alpha, rnd):
    rows, cols, q, order, seed = spec
    g = build_geometry(rows, cols, order)
    z = _field(rows, cols, q, seed)
    perm = list(range(q))
    rnd.shuffle(perm)
    zp = np.asarray(perm)[z]
    backends = ["exact", "pl"] + (["rcoda"] if order == "first" else ["rcoda-m", "rcoda-c"])
    for b in backends:
        a = make_likelihood(b, z, g, q, T=1)(beta, alpha)
        c = make_likelihood(b, zp, g, q, T=1)(beta, alpha)
        assert a == pytest.approx(c, abs=1e-10)


@settings(max_examples=100, deadline=None)
@given(fields, st.floats(0, 2))
def test_T0_equals_exact(spec, beta):
    rows, cols, q, order, seed = spec
    g = build_geometry(rows, cols, order)
    z = _field(rows, cols, q, seed)
    want = exact_log_likelihood(z, PottsModel(g, q, beta))
    plan = build_plan(g, 0)
    params = ModelParams(beta, 0.5, 0, q, g.order)
    if order == "first":
        got = rcoda_loglik_first(z, params, plan)
    else:
        got = rcoda_loglik_second(z, params, plan, variant="M")
    assert abs(got - want) <= 1e-12 * max(1.0, abs(want))


@pytest.mark.parametrize("beta", [0.2, 0.6])
def test_conditional_block_oracle_first_order(beta):
    plan = build_plan(build_geometry(3, 3, "first"), 1)
    lv = plan.levels[0]
    rng = np.random.default_rng(42)
    for _ in range(20):
        z = rng.integers(0, 2, (3, 3))
        lik = RcodaLikelihood(z, plan, 2)
        cond, _ = lik.level_terms(beta, 1.0)
        ref = oracles.conditional_block(z.ravel().tolist(), lv.conditioned.tolist(), 3, 3, 2, beta)
        assert cond == pytest.approx(ref, abs=1e-10)


def test_second_order_class1_oracle():
    plan = build_plan(build_geometry(4, 4, "second"), 1)
    lv = plan.levels[0]
    rng = np.random.default_rng(1)
    for _ in range(10):
        z = rng.integers(0, 3, (4, 4))
        got = conditional_block_loglik(z, lv.conditioned, lv.cond_neighbours, 0.4, 3)
        ref = oracles.conditional_block(z.ravel().tolist(), lv.conditioned.tolist(), 4, 4, 3, 0.4, second=True)
        assert got == pytest.approx(ref, abs=1e-10)


def test_variants_differ_only_in_class2():
    g = build_geometry(8, 8, "second")
    plan = build_plan(g, 2)
    z = np.random.default_rng(3).integers(0, 2, (8, 8))
    m = make_likelihood("rcoda-m", z, g, 2, plan=plan)
    c = make_likelihood("rcoda-c", z, g, 2, plan=plan)
    assert m.level_terms(0.3, 0.8)[1] == c.level_terms(0.3, 0.8)[1]
    assert m(0.3, 0.8) != c(0.3, 0.8)


def test_alpha_decay_and_terminal_exponent():
    g = build_geometry(8, 8, "first")
    plan = build_plan(g, 2)
    z = np.random.default_rng(4).integers(0, 2, (8, 8))
    base = RcodaLikelihood(z, plan, 2)
    assert base.uses_alpha
    # alpha = 1 puts every level at beta; the terminal exponent then has no effect
    other = RcodaLikelihood(z, plan, 2, terminal_exponent=0)
    assert base(0.4, 1.0) == pytest.approx(other(0.4, 1.0), abs=1e-12)
    assert base(0.4, 0.5) != pytest.approx(other(0.4, 0.5), abs=1e-6)
    ind = RcodaLikelihood(z, plan, 2, terminal="independent")
    assert ind.level_terms(0.4, 0.5)[1] == pytest.approx(-plan.terminal_geometry.n_sites * np.log(2))


def test_pattern_table_matches_direct_sum():
    g = build_geometry(6, 5, "second")
    z = np.random.default_rng(5).integers(0, 3, (6, 5)).ravel()
    sites = np.arange(30)
    t = PatternTable.from_sites(z, sites, g.neighbours, 3)
    assert t.weight.sum() == 30
    assert t.loglik(0.7) == pytest.approx(conditional_block_loglik(z, sites, g.neighbours, 0.7, 3), abs=1e-10)
    assert t.loglik(0.7) == pytest.approx(pseudo_loglik(z.reshape(6, 5), 3, 0.7, g), abs=1e-10)


def test_backend_order_mismatch():
    z = np.zeros((4, 4), dtype=int)
    with pytest.raises(IncompatibleBackend):
        make_likelihood("rcoda", z, build_geometry(4, 4, "second"), 2)
    with pytest.raises(IncompatibleBackend):
        make_likelihood("rcoda-c", z, build_geometry(4, 4, "first"), 2)
    with pytest.raises(ValueError, match="unknown backend"):
        make_likelihood("bogus", z, build_geometry(4, 4), 2)


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams(0.3, alpha=1.5)
    with pytest.raises(ValueError):
        ModelParams(-0.1)


@pytest.fixture(scope="module")
def small_table():
    return build_tdi_table(build_geometry(3, 3), 2, np.round(np.arange(0, 0.51, 0.05), 10), sweeps=4000, burn_in=200, seed=9)


def test_tdi_table_csv_roundtrip(small_table, tmp_path):
    p = tmp_path / "t.csv"
    small_table.to_csv(p)
    back = TdiTable.from_csv(p)
    assert np.array_equal(back.beta_grid, small_table.beta_grid)
    assert np.array_equal(back.log_c, small_table.log_c)
    assert np.array_equal(back.se, small_table.se)
    assert back.geometry_key == small_table.geometry_key
    assert back.to_csv() == small_table.to_csv()


def test_tdi_range_and_geometry_checks(small_table):
    z = np.zeros((3, 3), dtype=int)
    g = build_geometry(3, 3)
    assert tdi_loglik(z, 2, 0.25, small_table, g) == pytest.approx(0.25 * 12 - small_table.interpolate(0.25))
    with pytest.raises(RangeError):
        tdi_loglik(z, 2, 0.6, small_table, g)
    with pytest.raises(IncompatibleBackend):
        make_likelihood("tdi", np.zeros((4, 4), dtype=int), build_geometry(4, 4), 2, table=small_table)
    with pytest.raises(IncompatibleBackend):
        make_likelihood("tdi", z, g, 3, table=small_table)


def test_tdi_table_starts_exact(small_table):
    assert small_table.log_c[0] == 9 * np.log(2)
    assert small_table.se[0] == 0.0
    assert np.all(np.diff(small_table.se) >= 0)
