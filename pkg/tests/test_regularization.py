"""Smoothing machinery: chi integrals, smoothed backgrounds, barrier."""
import mpmath
import numpy as np
import pytest

from coneflow import (
    ConeData,
    RadialGrid,
    VectorFieldData,
    build_background,
    build_psi_aux,
    build_regularized_background,
    chi_derivatives,
    chi_eval,
    select_k,
)
from coneflow.errors import ParameterError, PositivityError
from coneflow.regularization import DEFAULT_EPS_SWEEP, chi_profile, lower_metric_bound

GRID = RadialGrid(-30.0, 30.0, 2049)
SYM = ConeData(1.0, 0.5, 1.0, 1.0)


def _chi_mpmath(eps: float, rho: float, u: float) -> float:
    """Independent high-precision quadrature of the displayed integral."""
    with mpmath.workdps(40):
        def integrand(r):
            if r == 0:
                return rho * mpmath.mpf(eps) ** (2 * rho - 2)
            return ((eps ** 2 + r) ** rho - mpmath.mpf(eps) ** (2 * rho)) / r

        value = mpmath.quad(integrand, [0, eps ** 2, u]) / rho
        return float(value)


def test_chi_trivial_values():
    assert chi_eval(0.1, 0.5, 0.0) == 0.0
    assert chi_eval(0.37, 1.0, 0.7) == 0.7
    assert chi_eval(0.0, 0.5, 1.0) == pytest.approx(4.0, abs=1e-12)


@pytest.mark.parametrize("eps,rho,u", [
    (0.25, 0.5, 1.0),
    (0.1, 0.6, 0.5),
    (0.03125, 0.35, 0.9),
    (0.5, 0.9, 0.2),
])
def test_chi_against_high_precision_quadrature(eps, rho, u):
    assert chi_eval(eps, rho, u) == pytest.approx(_chi_mpmath(eps, rho, u), rel=1e-9)
    prof = chi_profile(eps, rho, np.array([u]))[0]
    assert prof == pytest.approx(_chi_mpmath(eps, rho, u), rel=1e-9)


def test_chi_monotone_in_u():
    u = np.linspace(0.0, 1.0, 101)
    prof = chi_profile(0.1, 0.45, u)
    assert np.all(np.diff(prof) > 0)


def test_chi_decreasing_in_eps_and_limit():
    u = 0.8
    rho = 0.55
    values = [chi_eval(2.0 ** -j, rho, u) for j in range(2, 11)]
    assert all(b > a for a, b in zip(values, values[1:]))  # increases as eps drops
    limit = u ** rho / rho ** 2
    errors = [abs(v - limit) for v in values]
    assert all(b < a for a, b in zip(errors, errors[1:]))
    assert errors[-1] < 1e-2 * limit


def test_chi_uniform_bound_over_sweep():
    u = np.linspace(0.0, 1.0, 257)
    for rho in (0.35, 0.5, 0.8):
        bound = 1.0 / rho ** 2
        for eps in DEFAULT_EPS_SWEEP:
            prof = chi_profile(eps, rho, u)
            assert np.all(prof >= 0.0)
            assert np.all(prof <= bound * (1 + 1e-12))


def test_chi_derivatives_closed_forms():
    first, second = chi_derivatives(0.3, 1.0, 0.5)
    assert (first, second) == (1.0, 0.0)
    for eps, rho, u in [(0.1, 0.6, 0.5), (0.25, 0.4, 0.8)]:
        first, _ = chi_derivatives(eps, rho, u)
        assert first >= 0.0
        direct = ((eps ** 2 + u) ** rho - eps ** (2 * rho)) / (rho * u)
        assert first == pytest.approx(direct, rel=1e-14)


def test_chi_second_derivative_vs_quadrature_differences():
    eps, rho, u = 0.1, 0.6, 0.5
    _, second = chi_derivatives(eps, rho, u)

    def fd(h):
        return (
            chi_eval(eps, rho, u + h, 1e-12)
            - 2 * chi_eval(eps, rho, u, 1e-12)
            + chi_eval(eps, rho, u - h, 1e-12)
        ) / h ** 2

    richardson = (4 * fd(0.01) - fd(0.02)) / 3.0
    assert abs(second - richardson) <= 1e-6


def test_chi_derivative_series_branch_matches_closed_form():
    eps, rho = 0.2, 0.45
    u = 0.99e-4 * eps ** 2  # inside the series branch
    first, second = chi_derivatives(eps, rho, u)
    closed_first = ((eps ** 2 + u) ** rho - eps ** (2 * rho)) / (rho * u)
    closed_second = ((eps ** 2 + u) ** (rho - 1.0) - closed_first) / u
    assert first == pytest.approx(closed_first, rel=1e-10)
    # the direct second-derivative formula loses ~x digits to cancellation,
    # which is exactly why the series branch exists; compare at its accuracy
    assert second == pytest.approx(closed_second, rel=1e-6)


def test_chi_derivative_limit_at_zero():
    eps, rho = 0.2, 0.45
    first, second = chi_derivatives(eps, rho, 1e-12)
    assert first == pytest.approx(eps ** (2 * rho - 2), rel=1e-9)
    assert second == pytest.approx((rho - 1) / 2 * eps ** (2 * rho - 4), rel=1e-6)


@pytest.fixture(scope="module")
def bg():
    return build_background(SYM, VectorFieldData(0.3), GRID)


def test_regbg_k_zero(bg):
    regbg = build_regularized_background(0.125, 0.0, SYM, bg)
    assert np.array_equal(regbg.omega_eps_density, bg.u0pp)
    assert regbg.nu == 1.0


def test_regbg_beta_one_feps(bg):
    cone = ConeData(1.0, 1.0, 1.0, 1.0)
    bg1 = build_background(cone, VectorFieldData(0.0), GRID)
    regbg = build_regularized_background(0.125, 0.2, cone, bg1)
    expected = bg1.f0 + np.log(regbg.omega_eps_density / bg1.u0pp)
    assert np.max(np.abs(regbg.f_eps - expected)) < 1e-14


def test_regbg_eps_halving_chi_converges(bg):
    mask = (GRID.s > -12) & (GRID.s < 12)
    prev = None
    diffs = []
    for j in range(2, 9):
        regbg = build_regularized_background(2.0 ** -j, 0.3, SYM, bg)
        if prev is not None:
            diffs.append(np.max(np.abs(regbg.chi[mask] - prev[mask])))
        prev = regbg.chi
    assert all(b < a for a, b in zip(diffs, diffs[1:]))


def test_regbg_positivity_guard(bg):
    with pytest.raises(PositivityError):
        build_regularized_background(0.125, 1e4, SYM, bg)


def test_eta_density_mass_and_limit(bg):
    # away from the poles eta_eps converges to zero density ([D] is atomic)
    mask = (GRID.s > -8) & (GRID.s < 8)
    sups = []
    for j in (3, 5, 7, 9):
        regbg = build_regularized_background(2.0 ** -j, 0.3, SYM, bg)
        sups.append(np.max(np.abs(regbg.eta_eps_density[mask])))
    assert all(b < a for a, b in zip(sups, sups[1:]))
    # eps^2-rate decay: each two-octave step shrinks the sup by ~16x
    assert sups[-1] < 0.35 * sups[-2]
    assert sups[-1] < 0.05


def test_feps_uniformly_bounded(bg):
    sups = [
        float(np.max(np.abs(
            build_regularized_background(eps, 0.3, SYM, bg).f_eps
        )))
        for eps in DEFAULT_EPS_SWEEP
    ]
    assert max(sups) < 8.0
    assert abs(sups[-1] - sups[-2]) < 0.05 * sups[-1]


def test_select_k(bg):
    with pytest.raises(ParameterError, match="target_nu"):
        select_k(SYM, bg, 1.0)
    k_star = select_k(SYM, bg, 0.5)
    assert k_star > 0
    eps_hi, eps_lo = max(DEFAULT_EPS_SWEEP), min(DEFAULT_EPS_SWEEP)
    for eps in (eps_hi, eps_lo):
        assert lower_metric_bound(eps, k_star, SYM, bg) >= 0.5 - 1e-6
    assert lower_metric_bound(eps_lo, 2 * k_star, SYM, bg) < 0.5


def test_psi_aux(bg):
    zero = build_psi_aux(0.125, 0.5, 0.0, SYM, bg)
    assert zero.sup == 0.0 and np.all(zero.profile == 0.0)
    sups = []
    for eps in DEFAULT_EPS_SWEEP:
        psi = build_psi_aux(eps, 0.5, 1.0, SYM, bg)
        sups.append(psi.sup)
        assert psi.max_coeff > 0.0
    assert max(sups) <= 2.0 / 0.5 ** 2 + 1e-9  # eps-free analytic bound
    assert abs(sups[-1] - sups[-2]) < 0.1 * sups[-1]
