import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rcoda.lattice import build_geometry
from rcoda.potts import (
    CapacityError,
    PottsModel,
    bond_count,
    exact_log_constant,
    exact_log_likelihood,
    expected_bonds_curve,
    gibbs_sample,
    log_bond_histogram,
    transfer_log_constant,
)

import oracles

# frozen brute-force values (tests/oracles.py)
LOGC_2x2_Q2_B1 = 5.297642004809911  # log(2e^4 + 12e^2 + 2)
LOGC_2x3_Q3_B07_SECOND = 10.152828885803288
LOGC_3x3_Q2_B04 = 8.883044791348631


def test_bond_count_small():
    g = build_geometry(2, 2, "first")
    assert bond_count(np.array([[0, 0], [0, 0]]), g) == 4
    assert bond_count(np.array([[0, 1], [1, 0]]), g) == 0
    assert bond_count(np.array([[0, 0], [1, 1]]), g) == 2
    g2 = build_geometry(2, 2, "second")
    assert bond_count(np.array([[0, 1], [1, 0]]), g2) == 2


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(2, 4), st.booleans(), st.integers(0, 2**32 - 1))
def test_bond_count_matches_oracle(rows, cols, q, second, seed):
    z = np.random.default_rng(seed).integers(0, q, (rows, cols))
    g = build_geometry(rows, cols, "second" if second else "first")
    assert bond_count(z, g) == oracles.bonds(z.ravel().tolist(), oracles.lattice_edges(rows, cols, second))


@pytest.mark.parametrize("method", ["enumerate", "transfer"])
def test_frozen_constants(method):
    assert exact_log_constant(PottsModel(build_geometry(2, 2), 2, 1.0), method) == pytest.approx(LOGC_2x2_Q2_B1, abs=1e-12)
    m = PottsModel(build_geometry(2, 3, "second"), 3, 0.7)
    assert exact_log_constant(m, method) == pytest.approx(LOGC_2x3_Q3_B07_SECOND, abs=1e-12)
    assert exact_log_constant(PottsModel(build_geometry(3, 3), 2, 0.4), method) == pytest.approx(LOGC_3x3_Q2_B04, abs=1e-12)


def test_beta_zero_is_q_to_the_n():
    for rows, cols, q in [(2, 2, 2), (3, 4, 3), (3, 3, 2)]:
        m = PottsModel(build_geometry(rows, cols), q, 0.0)
        for method in ("enumerate", "transfer"):
            assert exact_log_constant(m, method) == rows * cols * np.log(q)
        # the recursion itself, without the closed form
        assert transfer_log_constant(m.geometry, q, 0.0) == pytest.approx(rows * cols * np.log(q), rel=1e-12)


def test_likelihood_normalises_on_2x3():
    g = build_geometry(2, 3)
    for q, beta in [(2, 0.8), (3, 0.3)]:
        m = PottsModel(g, q, beta)
        total = sum(np.exp(exact_log_likelihood(np.array(z).reshape(2, 3), m))
                    for z in itertools.product(range(q), repeat=6))
        assert total == pytest.approx(1.0, abs=1e-12)


def test_transfer_beyond_enumeration():
    # 5x6 q=2 has 2^30 states; transfer and the bond histogram must agree
    g = build_geometry(5, 6, "second")
    direct = transfer_log_constant(g, 2, 0.35)
    u = np.arange(g.n_edges + 1)
    h = log_bond_histogram(g, 2)
    ok = np.isfinite(h)
    via_hist = np.logaddexp.reduce(h[ok] + 0.35 * u[ok])
    assert direct == pytest.approx(via_hist, rel=1e-12)
    assert np.exp(np.logaddexp.reduce(h[ok]) - 30 * np.log(2)) == pytest.approx(1.0, rel=1e-12)


def test_capacity_error_on_wide_lattice():
    with pytest.raises(CapacityError):
        exact_log_constant(PottsModel(build_geometry(20, 20), 2, 0.3))


def test_model_validation():
    g = build_geometry(3, 3)
    with pytest.raises(ValueError):
        PottsModel(g, 1, 0.3)
    with pytest.raises(ValueError):
        PottsModel(g, 2, -0.1)


def test_gibbs_deterministic():
    m = PottsModel(build_geometry(16, 16), 3, 0.6)
    a = gibbs_sample(m, 50, seed=7)
    b = gibbs_sample(m, 50, seed=7)
    c = gibbs_sample(m, 50, seed=8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.min() >= 0 and a.max() < 3


def test_gibbs_beta_zero_uniform():
    z = gibbs_sample(PottsModel(build_geometry(64, 64), 3, 0.0), 1, seed=3)
    counts = np.bincount(z.ravel(), minlength=3)
    expected = z.size / 3
    chi2 = ((counts - expected) ** 2 / expected).sum()
    assert chi2 < 13.8  # 0.999 quantile, 2 dof


def test_gibbs_matches_exact_bond_distribution():
    g = build_geometry(3, 3)
    q, beta = 2, 0.5
    h = np.exp(log_bond_histogram(g, q) + beta * np.arange(g.n_edges + 1))
    p = h / h.sum()
    exact_mean = float(np.dot(p, np.arange(len(p))))
    curve = expected_bonds_curve(g, q, [0.0, beta], sweeps=40000, burn_in=1000, seed=11)
    assert abs(curve.mean_U[1] - exact_mean) < 4 * curve.se_U[1]


def test_bonds_curve_at_zero_and_monotone():
    g = build_geometry(16, 16)
    curve = expected_bonds_curve(g, 2, [0.0, 0.3, 0.6, 0.9], sweeps=1500, burn_in=300, seed=5)
    assert abs(curve.mean_U[0] - g.n_edges / 2) < 4 * curve.se_U[0]
    assert np.all(np.diff(curve.mean_U) > 0)


def test_exact_mean_bonds_monotone():
    # d/dbeta E[U] = Var[U] >= 0
    g = build_geometry(3, 4, "second")
    h = log_bond_histogram(g, 3)
    u = np.arange(len(h))
    ok = np.isfinite(h)
    means = []
    for beta in np.linspace(0, 2, 21):
        w = np.exp(h[ok] + beta * u[ok] - np.max(h[ok] + beta * u[ok]))
        means.append(np.dot(w, u[ok]) / w.sum())
    assert np.all(np.diff(means) > 0)
