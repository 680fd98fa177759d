from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scemix.classification import (ClassifierHyper, FieldSeries, classify_field, classify_series,
                                   convective_contribution, estimate_p_c)
from scemix.errors import EmptyField, EmptyLabels, NoConvectiveFields, NonGriddedSites
from scemix.geometry import SiteSet, lattice_indices

H = ClassifierHyper()


def brute_force_flags(grid: np.ndarray, h: ClassifierHyper) -> np.ndarray:
    """Enumerate every adjacent pair inside each site's window and apply the flag rule."""
    nr, nc = grid.shape
    k = h.n_g // 2
    flags = np.zeros(grid.shape, dtype=bool)
    for r in range(nr):
        for c in range(nc):
            if r - k < 0 or c - k < 0 or r + k >= nr or c + k >= nc:
                continue
            diffs = []
            for rr in range(r - k, r + k + 1):
                for cc in range(c - k, c + k + 1):
                    if cc + 1 <= c + k:
                        diffs.append(abs(grid[rr, cc] - grid[rr, cc + 1]))
                    if rr + 1 <= r + k:
                        diffs.append(abs(grid[rr, cc] - grid[rr + 1, cc]))
            diffs = np.array(diffs)
            n_lo = np.count_nonzero(diffs >= h.g_l)
            p = np.count_nonzero(diffs >= h.g_u) / n_lo if n_lo else 0.0
            flags[r, c] = p >= h.p_star
    return flags


def on_sites(sites: SiteSet, grid: np.ndarray) -> np.ndarray:
    rows, cols = lattice_indices(sites.lon, sites.lat)
    return grid[rows, cols], (rows, cols)


def check_against_oracle(sites, grid, h=H):
    field, (rows, cols) = on_sites(sites, grid)
    label, flags = classify_field(field, sites, h)
    expected = brute_force_flags(grid, h)[rows, cols]
    if not np.any(field >= 1e-5):
        expected[:] = False
    np.testing.assert_array_equal(flags, expected)
    assert label == ("C" if expected.any() else "N")
    return label, flags


def test_window_has_144_pairs():
    # a 9x9 window holds 9*8 horizontal and 8*9 vertical pairs
    grid = np.zeros((9, 9))
    grid[::2, ::2] = 1.0
    h = ClassifierHyper(g_l=0.5, g_u=0.9, p_star=1.0)
    assert brute_force_flags(grid, h)[4, 4]


def test_single_spike_golden(grid9):
    grid = np.full((9, 9), 0.005)
    grid[4, 4] = 5.0
    label, flags = check_against_oracle(grid9, grid)
    # only the four differences touching the spike pass g_l, and all pass g_u: p = 4/4
    assert label == "C"
    assert flags.sum() == 1


def test_single_spike_diluted_by_drizzle(grid9):
    grid = np.full((9, 9), 0.5)
    grid[::2, :] = 0.6  # every vertical difference is 0.1 >= g_l
    grid[4, 4] = 5.0
    label, _ = check_against_oracle(grid9, grid)
    # 4 steep out of 72 vertical plus the spike's horizontal ones: below 0.2
    assert label == "N"


def test_all_zero_is_non_convective(grid9):
    label, flags = classify_field(np.zeros(81), grid9)
    assert label == "N" and not flags.any()


def test_drizzle_below_floor_is_non_convective(grid9):
    series = FieldSeries(grid9, np.full((1, 81), 5e-6))
    out = classify_series(series)
    assert out.labels.tolist() == ["N"]


def test_edge_sites_never_flagged():
    sites = SiteSet.regular_grid(11, 11, 2.2)
    grid = np.zeros((11, 11))
    grid[0, 0] = 10.0
    check_against_oracle(sites, grid)
    grid[:] = 0.0
    grid[5, 5] = 10.0
    label, flags = check_against_oracle(sites, grid)
    assert label == "C" and flags.sum() == 9


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_random_fields_match_oracle(seed):
    rng = np.random.default_rng(seed)
    sites = SiteSet.regular_grid(11, 10, 2.2)
    rows, cols = lattice_indices(sites.lon, sites.lat)
    shape = (rows.max() + 1, cols.max() + 1)
    grid = rng.exponential(0.3, shape) * (rng.random(shape) < 0.6)
    grid[rng.random(shape) < 0.05] += rng.uniform(1, 5)
    check_against_oracle(sites, grid)


def _neighbour_diffs(grid, r, c):
    out = []
    for dr, dc in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        if 0 <= r + dr < grid.shape[0] and 0 <= c + dc < grid.shape[1]:
            out.append(grid[r, c] - grid[r + dr, c + dc])
    return np.array(out)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 80), st.floats(0.0, 20.0))
def test_raising_a_steep_peak_never_unflags(seed, cell, bump):
    sites = SiteSet.regular_grid(9, 9, 2.2)
    rows, cols = lattice_indices(sites.lon, sites.lat)
    rng = np.random.default_rng(seed)
    grid = np.zeros((9, 9))
    grid[rows, cols] = rng.exponential(0.5, 81) * (rng.random(81) < 0.5)
    r, c = rows[cell], cols[cell]
    # make the cell a peak whose differences all already reach g_l
    grid[r, c] = max(grid[r, c], grid.max() + 2 * H.g_l)
    assert np.all(_neighbour_diffs(grid, r, c) >= H.g_l)
    bumped = grid.copy()
    bumped[r, c] += bump
    before = brute_force_flags(grid, H)
    after = brute_force_flags(bumped, H)
    assert np.all(after[before])
    _, flags = classify_field(bumped[rows, cols], sites, H)
    np.testing.assert_array_equal(flags, after[rows, cols])


def test_raising_a_cell_can_unflag_in_general():
    # a new difference crossing g_l but not g_u enlarges the denominator
    grid = np.zeros((9, 9))
    grid[0, 0] = 2.0  # 2 steep differences
    grid[2, 2] = grid[2, 6] = 0.5  # 8 gentle ones: p = 2 / 10 = p_star
    before = brute_force_flags(grid, H)
    grid[6, 4] = 0.5  # 4 more gentle ones: p = 2 / 14
    after = brute_force_flags(grid, H)
    assert before[4, 4] and not after[4, 4]


def test_scaling_invariance_needs_scaled_thresholds(grid9):
    rng = np.random.default_rng(3)
    field = rng.exponential(0.6, 81)
    grid = np.zeros((9, 9))
    rows, cols = lattice_indices(grid9.lon, grid9.lat)
    grid[rows, cols] = field
    c = 7.0
    h_scaled = ClassifierHyper(H.g_l * c, H.g_u * c, H.p_star, H.n_g)
    a = classify_field(field, grid9, H)
    b = classify_field(field * c, grid9, h_scaled)
    assert a[0] == b[0]
    np.testing.assert_array_equal(a[1], b[1])
    # with unscaled thresholds the labels generally differ
    grid_small = np.full((9, 9), 0.5)
    grid_small[4, 4] = 1.2
    f = grid_small[rows, cols]
    assert classify_field(f, grid9, H)[0] == "N"
    assert classify_field(f * 10, grid9, H)[0] == "C"


def test_errors(grid9):
    with pytest.raises(ValueError):
        classify_field(np.zeros(80), grid9)
    with pytest.raises(NonGriddedSites):
        sites = SiteSet.from_arrays([0.0, 0.01, 0.0237], [52.0, 52.0, 52.0])
        classify_field(np.ones(3), sites)
    with pytest.raises(EmptyField):
        classify_field(np.zeros(0), grid9)
    with pytest.raises(ValueError):
        ClassifierHyper(n_g=4)
    with pytest.raises(ValueError):
        ClassifierHyper(g_l=1.0, g_u=1.0)


def test_estimate_p_c():
    assert estimate_p_c(["C", "N"]) == 0.5
    assert estimate_p_c(["C"] * 3 + ["N"]) == 0.75
    assert estimate_p_c(["N"] * 5) == 0.0
    assert estimate_p_c(["C"] * 5) == 1.0
    with pytest.raises(EmptyLabels):
        estimate_p_c([])


@given(st.lists(st.sampled_from(["C", "N"]), min_size=1, max_size=200))
def test_estimate_p_c_exact(labels):
    assert estimate_p_c(labels) == labels.count("C") / len(labels)


def test_series_threads_deterministic(grid9):
    rng = np.random.default_rng(0)
    values = rng.exponential(0.5, (40, 81)) * (rng.random((40, 81)) < 0.5)
    a = classify_series(FieldSeries(grid9, values))
    b = classify_series(FieldSeries(grid9, values), threads=4)
    np.testing.assert_array_equal(a.labels, b.labels)
    np.testing.assert_array_equal(a.site_flags, b.site_flags)


def test_field_series_floor():
    sites = SiteSet.regular_grid(2, 2, 2.2)
    s = FieldSeries(sites, [[1e-6, 1e-5, 0.2, 0.0]])
    assert s.values.tolist() == [[0.0, 1e-5, 0.2, 0.0]]
    with pytest.raises(ValueError):
        FieldSeries(sites, [[-1.0, 0, 0, 0]])


def test_convective_contribution_degenerate():
    sites = SiteSet.regular_grid(6, 6, 2.2)
    rng = np.random.default_rng(1)
    values = rng.exponential(1.0, (20, 36)) + 0.1
    labels = ["C"] * 20
    all_flag = FieldSeries(sites, values, labels, np.ones((20, 36), bool))
    none_flag = FieldSeries(sites, values, labels, np.zeros((20, 36), bool))
    out = convective_contribution(all_flag, 5.0, M=20, seed=0)
    assert out.size > 0 and np.all(out == 1.0)
    out = convective_contribution(none_flag, np.inf, M=20, seed=0)
    assert np.all(out == 0.0)
    with pytest.raises(NoConvectiveFields):
        convective_contribution(FieldSeries(sites, values, ["N"] * 20, np.zeros((20, 36), bool)), 5.0)
