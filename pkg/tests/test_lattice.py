import numpy as np
import pytest

from boltzlab.lattice import (DispersionLaw, MomentumGrid, check_assumption_a,
                              diff_matrices, spectral_derivative, trig_eval,
                              trig_coefficients, trig_shift, wrap_torus)


def test_dispersion_values():
    law1 = DispersionLaw.cosine(1)
    assert law1.energy(0.0) == pytest.approx(0.0, abs=1e-15)
    assert law1.energy(np.pi) == pytest.approx(4.0, abs=1e-12)
    law2 = DispersionLaw.cosine(2)
    assert law2.energy([np.pi / 2, np.pi / 2]) == pytest.approx(4.0, abs=1e-12)


def test_group_velocity_values():
    law = DispersionLaw.cosine(1)
    assert law.group_velocity(0.0)[0] == pytest.approx(0.0, abs=1e-15)
    assert law.group_velocity(np.pi / 2)[0] == pytest.approx(2.0, abs=1e-12)
    assert law.group_velocity(-np.pi / 2)[0] == pytest.approx(-2.0, abs=1e-12)


def test_energy_symmetric_on_grid():
    # the grid maps onto itself under k -> -k: index j goes to (n - j) mod n
    law = DispersionLaw.cosine(2)
    grid = MomentumGrid.build(2, 16)
    n = grid.n_per_axis
    e = law.energy_grid(grid).reshape(grid.shape)
    flip = (-np.arange(n)) % n
    e_neg = e[np.ix_(flip, flip)]
    assert np.max(np.abs(e - e_neg)) == 0.0


def test_grid_weight_sums_to_full_torus():
    grid = MomentumGrid.build(2, 24)
    assert grid.size * grid.weight == pytest.approx((2 * np.pi) ** 2, rel=1e-14)
    assert grid.n_per_axis % 2 == 0
    with pytest.raises(ValueError):
        MomentumGrid.build(1, 63)


def test_spectral_derivative_constant_and_sine():
    grid = MomentumGrid.build(1, 32)
    const = np.full(32, 3.7)
    assert np.abs(spectral_derivative(grid, const, 0)).max() == 0.0
    k = grid.axis_points
    d = spectral_derivative(grid, np.sin(k), 0)
    assert np.abs(d - np.cos(k)).max() < 1e-12


def test_spectral_derivative_matches_group_velocity():
    law = DispersionLaw.cosine(1)
    for n in (16, 64):
        grid = MomentumGrid.build(1, n)
        eps = law.energy_grid(grid)
        d = spectral_derivative(grid, eps, 0)
        assert np.abs(d - law.velocity_grid(grid)[:, 0]).max() < 1e-10


def test_derivative_integrates_to_zero():
    law = DispersionLaw.cosine(1)
    grid = MomentumGrid.build(1, 64)
    d = spectral_derivative(grid, law.energy_grid(grid), 0)
    assert abs(grid.integrate(d)) < 1e-12


def test_spectral_derivative_rejects_nonfinite():
    grid = MomentumGrid.build(1, 8)
    bad = np.ones(8)
    bad[3] = np.nan
    with pytest.raises(ValueError):
        spectral_derivative(grid, bad, 0)


def test_diff_matrix_matches_fft_derivative(rng):
    grid = MomentumGrid.build(1, 32)
    D = diff_matrices(grid)[0]
    f = rng.normal(size=32)
    assert np.abs(D @ f - spectral_derivative(grid, f, 0)).max() < 1e-10
    # exact conservation: zero column sums
    assert np.abs(D.sum(axis=0)).max() < 1e-12


def test_assumption_a_default_and_flat_axis():
    grid1 = MomentumGrid.build(1, 64)
    ok, _, worst = check_assumption_a(DispersionLaw.cosine(1), grid1)
    assert ok and worst > 1.0
    grid2 = MomentumGrid.build(2, 16)
    flat = DispersionLaw.cosine(2, amplitudes=(2.0, 0.0))
    ok2, direction, worst2 = check_assumption_a(flat, grid2)
    assert not ok2
    assert abs(abs(direction[1]) - 1.0) < 1e-12 and worst2 < 1e-10


def test_assumption_a_three_dimensions():
    grid = MomentumGrid.build(3, 8)
    ok, _, worst = check_assumption_a(DispersionLaw.cosine(3), grid)
    assert ok and worst > 0.5


def test_tabulated_law_roundtrip_and_offgrid_error():
    grid = MomentumGrid.build(1, 16)
    base = DispersionLaw.cosine(1)
    tab = DispersionLaw.tabulated(grid, base.energy_grid(grid))
    assert np.abs(tab.energy_grid(grid) - base.energy_grid(grid)).max() == 0.0
    with pytest.raises(ValueError, match="interpolation"):
        tab.energy(0.1234)


def test_trig_shift_exact_for_modes():
    grid = MomentumGrid.build(1, 32)
    k = grid.axis_points
    f = np.cos(3 * k) + 0.5 * np.sin(5 * k)
    s = 0.7312
    shifted = trig_shift(grid, f, [s])
    expected = np.cos(3 * (k - s)) + 0.5 * np.sin(5 * (k - s))
    assert np.abs(shifted - expected).max() < 1e-13


def test_trig_eval_matches_offgrid():
    grid = MomentumGrid.build(1, 32)
    k = grid.axis_points
    f = np.exp(np.cos(k))
    c = trig_coefficients(grid, f)
    kq = np.array([-1.1, 0.0, 0.3, 2.9])
    got = trig_eval(grid, c, kq)
    assert np.abs(got - np.exp(np.cos(kq))).max() < 1e-12


def test_wrap_torus_range():
    ks = np.array([-np.pi, np.pi, 3.5 * np.pi, -7.2])
    w = wrap_torus(ks)
    assert np.all(w >= -np.pi) and np.all(w < np.pi)
    assert w[1] == pytest.approx(-np.pi)
