import numpy as np
import pytest
from scipy.integrate import quad

from boltzlab.reservoir import (DetailedBalanceReport, FormFactor,
                                OracleUnavailableError, ReservoirSpec,
                                SpectralDensity, check_detailed_balance,
                                correlation_function, correlation_table,
                                finite_volume_correlation, fit_decay_rate,
                                spectral_density_analytic,
                                spectral_density_numeric, truncation_time)

# frozen oracle values: Int_0^inf S w^{d-1} e^{-w^2} coth(w/2) dw at beta = 1
PSIHAT0_D2 = 11.58971878281728
PSIHAT0_D3 = 13.580932982847242


def test_correlation_at_zero_matches_coth_oracle():
    for d_res, golden in ((2, PSIHAT0_D2), (3, PSIHAT0_D3)):
        spec = ReservoirSpec(beta=1.0, d_res=d_res)
        v = correlation_function(spec, 0.0)
        assert v.imag == pytest.approx(0.0, abs=1e-10)
        assert v.real > 0
        assert v.real == pytest.approx(golden, abs=1e-8)


def test_correlation_conjugation_symmetry():
    spec = ReservoirSpec(beta=1.0, d_res=3)
    a = correlation_function(spec, 1.7)
    b = correlation_function(spec, -1.7)
    assert abs(np.conj(a) - b) < 1e-10


def test_correlation_strip_domain():
    spec = ReservoirSpec(beta=1.0, d_res=2)
    mid = correlation_function(spec, 0.5j)  # inside the thermal strip
    assert abs(mid.imag) < 1e-9 and mid.real > 0
    with pytest.raises(ValueError, match="strip"):
        correlation_function(spec, -0.2j)
    with pytest.raises(ValueError, match="strip"):
        correlation_function(spec, 1.0 + 1.5j)


def test_correlation_decays_with_positive_window_rate():
    # exponential-fit rate over the window is positive for both reservoir dims
    for d_res in (2, 3):
        spec = ReservoirSpec(beta=1.0, d_res=d_res)
        fit = fit_decay_rate(spec)
        assert fit.rate > 0
        v0 = abs(correlation_function(spec, 0.0))
        v10 = abs(correlation_function(spec, 10.0))
        assert v10 < v0 * np.exp(-fit.rate * 10.0) * 10.0  # bound up to fit slack
        assert v10 < v0


def test_correlation_table_matches_adaptive_quadrature():
    spec = ReservoirSpec(beta=1.0, d_res=2)
    ts = np.array([0.0, 0.4, 1.3, 3.7])
    tab = correlation_table(spec, ts)
    ref = np.array([correlation_function(spec, t) for t in ts])
    assert np.abs(tab - ref).max() < 1e-9


def test_finite_volume_q0_term():
    # subtracting a hand-built sum without the q = 0 cell isolates exactly
    # the infrared-regularized term (2 pi / L)^d |phi(0)|^2 (...) with omega(0)=1
    spec = ReservoirSpec(beta=1.0, d_res=3)
    L, t = 10.0, 0.8
    dq = 2 * np.pi / L
    qcut = spec.form_factor.width * np.sqrt(-np.log(1e-14)) + dq
    mmax = int(np.ceil(qcut / dq))
    ax = dq * np.arange(-mmax, mmax + 1)
    mesh = np.meshgrid(ax, ax, ax, indexing="ij")
    q = np.sqrt(sum(m**2 for m in mesh)).ravel()
    q = q[q > 0]
    phi2 = spec.form_factor.squared(q)
    keep = phi2 >= 1e-14
    q, phi2 = q[keep], phi2[keep]
    n = 1.0 / np.expm1(q)
    manual_wo_zero = dq**3 * (phi2 * (np.exp(-1j * t * q) * n
                                      + np.exp(1j * t * q) * (1 + n))).sum()
    beta = spec.beta
    q0_term = dq**3 * spec.form_factor.amplitude**2 * (
        np.exp(-1j * t) / np.expm1(beta) + np.exp(1j * t) / (-np.expm1(-beta)))
    full = finite_volume_correlation(spec, L, t)
    assert abs(full - (manual_wo_zero + q0_term)) < 1e-12


def test_finite_volume_converges_uniformly_on_compacts():
    spec = ReservoirSpec(beta=1.0, d_res=3)
    ts = np.linspace(0.0, 5.0, 6)
    ref = np.array([correlation_function(spec, t) for t in ts])
    scale = abs(ref[0])
    sup_gaps = []
    for L in (40.0, 80.0, 160.0):
        fv = finite_volume_correlation(spec, L, ts)
        sup_gaps.append(np.abs(fv - ref).max() / scale)
    assert sup_gaps[1] < sup_gaps[0] and sup_gaps[2] < sup_gaps[1]
    # infrared-cell limited O(L^-2) rate puts the 1e-3 threshold at L = 160
    assert sup_gaps[2] < 1e-3 * 5


def test_finite_volume_t0_threshold():
    spec = ReservoirSpec(beta=1.0, d_res=3)
    inf = correlation_function(spec, 0.0)
    gap = abs(finite_volume_correlation(spec, 160.0, 0.0) - inf) / abs(inf)
    assert gap < 1e-3


def test_finite_volume_rejects_bad_box():
    with pytest.raises(ValueError):
        finite_volume_correlation(ReservoirSpec(), -1.0, 0.0)


def test_spectral_density_at_zero():
    assert spectral_density_analytic(ReservoirSpec(d_res=3), 0.0) == 0.0
    spec2 = ReservoirSpec(beta=2.0, d_res=2)
    assert spectral_density_analytic(spec2, 0.0) == pytest.approx(2 * np.pi / 2.0, rel=1e-14)


def test_spectral_density_positive_everywhere():
    spec = ReservoirSpec(beta=1.0, d_res=3)
    om = np.linspace(-6, 6, 301)
    assert np.all(spectral_density_analytic(spec, om) >= 0)


def test_detailed_balance_identity_analytic():
    spec = ReservoirSpec(beta=1.0, d_res=3)
    om = 0.7
    lhs = np.exp(spec.beta * om) * spectral_density_analytic(spec, om)
    rhs = spectral_density_analytic(spec, -om)
    assert abs(lhs - rhs) / rhs < 1e-12
    rep = check_detailed_balance(spec, np.linspace(-5, 5, 100))
    assert isinstance(rep, DetailedBalanceReport) and rep.passed


def test_detailed_balance_negative_control():
    # doctoring one branch with beta -> 2 beta must blow the identity
    spec = ReservoirSpec(beta=1.0, d_res=3)
    om = np.linspace(0.2, 3.0, 20)
    corrupt = spectral_density_analytic(ReservoirSpec(beta=2.0, d_res=3), om)
    good_neg = spectral_density_analytic(spec, -om)
    viol = np.abs(np.exp(spec.beta * om) * corrupt - good_neg) / good_neg
    assert viol.max() > 1e-2


def test_reservoir_rejects_unsupported_dimension():
    with pytest.raises(ValueError, match="d_res"):
        ReservoirSpec(d_res=1)
    with pytest.raises(ValueError):
        ReservoirSpec(beta=-1.0)
    with pytest.raises(ValueError):
        FormFactor(profile="lorentzian")


def test_numeric_oracle_agrees_with_analytic_d2():
    spec = ReservoirSpec(beta=1.0, d_res=2)
    om = np.array([-1.0, -0.5, 0.5, 1.0, 2.0])
    pa = spectral_density_analytic(spec, om)
    pn = spectral_density_numeric(spec, om)
    assert np.max(np.abs(pn - pa) / np.abs(pa)) < 1e-5


def test_numeric_detailed_balance_d2():
    spec = ReservoirSpec(beta=1.0, d_res=2)
    rep = check_detailed_balance(spec, np.array([-0.3, 0.3, 0.9, -0.9]), numeric=True)
    assert rep.passed  # 1e-4 tolerance on the Fourier route


def test_oracle_unavailable_for_slow_tails():
    # gaussian coupling in d_res = 3 leaves a kink at omega = 0: the
    # correlation function decays only algebraically and the windowed
    # transform cannot certify its tail
    spec = ReservoirSpec(beta=1.0, d_res=3)
    with pytest.raises(OracleUnavailableError):
        truncation_time(spec, tol=1e-8)
    with pytest.raises(OracleUnavailableError):
        spectral_density_numeric(spec, 0.5)


def test_spectral_density_bundle_validates():
    sd = SpectralDensity(ReservoirSpec(beta=1.5, d_res=3))
    assert sd.beta == 1.5
    assert sd(1.0) > 0


def test_numeric_vs_quad_crosscheck_independent_route():
    # literal (1/2 pi) Int psi_hat e^{i w t} via scipy.quad as a second oracle
    spec = ReservoirSpec(beta=1.0, d_res=2)
    T = truncation_time(spec, tol=1e-8)
    om = 0.5
    tab_t = np.linspace(0, T, 4001)
    vals = correlation_table(spec, tab_t)

    def interp(t):
        return np.interp(t, tab_t, vals.real), np.interp(t, tab_t, vals.imag)

    re, _ = quad(lambda t: interp(t)[0] * np.cos(om * t) - interp(t)[1] * np.sin(om * t),
                 0, T, limit=800)
    literal = re / np.pi
    assert abs(literal - spectral_density_analytic(spec, om)) < 1e-4
