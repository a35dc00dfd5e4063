import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afdmsim.analysis import (
    afdm_overhead,
    binomial_bound_ccdf,
    bound_trials,
    ccdf_table,
    chernoff_tail,
    compute_occupancy,
    daft_shift_index,
    exact_xk_ccdf,
    exact_xk_pmf,
    min_pilots,
    occupancy_counts,
    rho,
    select_chirp_slope,
    shift_support,
    write_ccdf_csv,
)
from afdmsim.channel import DelayDopplerProfile, SparsityModel, sample_profiles
from afdmsim.daft import AfdmParams
from afdmsim.errors import ConfigurationError

SECTION_MODEL = dict(L=60, Q=15, p_d=0.2)


def test_shift_index():
    assert daft_shift_index(3, -2, 2) == 4
    with pytest.raises(ConfigurationError):
        daft_shift_index(5, 0, 1, L=5)
    with pytest.raises(ConfigurationError):
        daft_shift_index(0, 4, 1, Q=3)


def test_occupancy_of_hand_profile():
    grid = np.zeros((3, 5), dtype=bool)
    grid[0, 2 + 1] = True  # (0, 1) -> k=1
    grid[1, 2 + 0] = True  # (1, 0) -> k=1
    grid[2, 2 - 2] = True  # (2, -2) -> k=0
    occ = compute_occupancy(DelayDopplerProfile(grid), P=1)
    assert occ.at(1) == 2 and occ.at(0) == 1 and occ.at(99) == 0
    assert occ.total == 3
    np.testing.assert_array_equal(occ.k, shift_support(3, 2, 1))
    assert min_pilots(DelayDopplerProfile(grid), 1) == 2
    assert min_pilots(DelayDopplerProfile(grid), 3) == 1


def test_min_pilots_empty_profile():
    assert min_pilots(DelayDopplerProfile(np.zeros((2, 3), dtype=bool)), 1) == 0


@pytest.mark.parametrize("L,Q,P", [(20, 5, 1), (7, 3, 2), (5, 1, 4), (1, 2, 1)])
def test_rho_counts_reachable_delays(L, Q, P):
    for k in range(-Q - 2, P * (L - 1) + Q + 3):
        direct = sum(1 for l in range(L) if -Q <= k - P * l <= Q)
        assert rho(k, L, Q, P) == direct


def test_pmf_matches_enumeration_type2():
    # type 2 cells are independent, so X_k is exactly binomial
    m = SparsityModel("type2", L=3, Q=1, p_d=0.6, p_D=0.3)
    p = m.cell_probability
    for k in shift_support(3, 1, 1):
        n = rho(int(k), 3, 1, 1)
        pmf = exact_xk_pmf(int(k), m, 1)
        expected = [math.comb(n, j) * p**j * (1 - p) ** (n - j) for j in range(n + 1)]
        np.testing.assert_allclose(pmf, expected)


def test_ccdf_zero_beyond_support():
    m = SparsityModel("type1", L=20, Q=5, p_d=0.3, p_D=0.3)
    assert exact_xk_ccdf(-5, 1, m, 1) == 0.0
    assert exact_xk_ccdf(0, 0, m, 1) > 0


def test_bound_dominates_exact():
    m = SparsityModel("type1", L=20, Q=5, p_d=0.3, p_D=0.3)
    for P in (1, 2, 3):
        for k in shift_support(20, 5, P):
            for M in range(6):
                assert exact_xk_ccdf(int(k), M, m, P) <= binomial_bound_ccdf(M, m, P) + 1e-15


def test_chernoff_dominates_binomial_tail():
    m = SparsityModel("type1", **SECTION_MODEL, p_D=0.2)
    assert bound_trials(15, 1) == 31
    for M in range(0, 32):
        assert chernoff_tail(M, m, 1) >= binomial_bound_ccdf(M, m, 1) - 1e-15
    assert chernoff_tail(0, m, 1) == 1.0
    assert chernoff_tail(40, m, 1) == 0.0


def test_chernoff_decreases():
    m = SparsityModel("type1", **SECTION_MODEL, p_D=0.2)
    tails = [chernoff_tail(M, m, 1) for M in range(2, 30)]
    assert all(a >= b for a, b in zip(tails, tails[1:]))


def test_overhead_formula():
    m = SparsityModel("type1", **SECTION_MODEL, p_D=0.2)
    assert afdm_overhead(7, AfdmParams(8192, P=1), m) == 630
    assert afdm_overhead(1, AfdmParams(8192, P=2), m) == 59 * 2 + 31


@pytest.mark.parametrize("p_D,P", [(0.2, 1), (0.3, 2)])
def test_chirp_slope_selection(p_D, P):
    assert select_chirp_slope(SparsityModel("type1", **SECTION_MODEL, p_D=p_D)) == P


def test_chirp_slope_window_covers_budget():
    m = SparsityModel("type1", L=60, Q=15, p_d=0.5, p_D=0.3)
    P = select_chirp_slope(m)
    assert (m.L - 1) * P + 2 * m.Q + 1 >= m.expected_active_cells()
    assert (m.L - 1) * (P - 1) + 2 * m.Q + 1 < m.expected_active_cells()
    assert select_chirp_slope(m, P_max=2) == min(P, 2)


def test_ccdf_csv_schema(rng):
    m = SparsityModel("type1", L=4, Q=1, p_d=0.5, p_D=0.5)
    emp = occupancy_counts(sample_profiles(m, rng, 1000), 1)
    rows = ccdf_table(m, 1, [0, 1], emp)
    text = write_ccdf_csv(rows)
    parsed = list(csv.DictReader(io.StringIO(text)))
    assert list(parsed[0]) == ["k", "M", "exact", "bound", "empirical"]
    assert len(parsed) == 2 * len(shift_support(4, 1, 1))
    assert float(parsed[0]["exact"]) == rows[0]["exact"]


@settings(max_examples=40, deadline=None)
@given(
    L=st.integers(1, 10),
    Q=st.integers(0, 4),
    P=st.integers(1, 4),
    seed=st.integers(0, 2**32 - 1),
)
def test_occupancy_conserves_paths(L, Q, P, seed):
    grid = np.random.default_rng(seed).random((L, 2 * Q + 1)) < 0.4
    occ = compute_occupancy(DelayDopplerProfile(grid), P)
    assert occ.total == grid.sum()
    assert occ.counts.size == P * (L - 1) + 2 * Q + 1
    for l, j in zip(*np.nonzero(grid)):
        assert occ.at(int(j) - Q + P * int(l)) >= 1
    assert occ.counts.max(initial=0) <= min(L, 2 * Q + 1)
