"""Epsilon-smoothing of the divisor terms.

The cone potential |s_i|^(2*rho) is regularized through

    chi(eps^2 + u) = (1/rho) * int_0^u ((eps^2+r)^rho - eps^(2*rho)) / r dr

evaluated here after the substitution r = eps^2*(e^v - 1), which removes the
r = 0 singularity analytically:

    chi = (eps^(2*rho)/rho) * int_0^V expm1(rho*v)/(-expm1(-v)) dv,
    V   = log(1 + u/eps^2).

Closed forms for the u-derivatives:

    chi'(u)  = ((eps^2+u)^rho - eps^(2*rho)) / (rho*u)
    chi''(u) = ((eps^2+u)^(rho-1) - chi'(u)) / u

both continuous as u -> 0+ (limits eps^(2*rho-2) and (rho-1)/2*eps^(2*rho-4)).
The pointwise eps -> 0 limit of the displayed integral is u^rho / rho^2; the
extra 1/rho^2 against the bare cone potential is a fixed multiplicative
constant and is kept as-is.

Everything downstream (smoothed metric, smoothed divisor current, twisted
Ricci potential, auxiliary barrier) is assembled from these profiles by the
chain rule through u = e^{h_i(s)}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import ParameterError, PositivityError, QuadratureError
from .geometry import BackgroundGeometry, ConeData

# Geometric default sweep eps_j = 2^-j, j = 2..10.
DEFAULT_EPS_SWEEP: tuple[float, ...] = tuple(2.0 ** -j for j in range(2, 11))

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_GL_X = 0.5 * (_GL_NODES + 1.0)  # nodes on (0, 1)
_GL_W = 0.5 * _GL_WEIGHTS


def _validate_chi_args(epsilon: float, rho: float) -> None:
    if epsilon < 0.0:
        raise ParameterError(f"epsilon must be nonnegative, got {epsilon}")
    if not (0.0 < rho <= 1.0):
        raise ParameterError(f"rho must lie in (0, 1], got {rho}")


def chi_eval(epsilon: float, rho: float, u: float, rel_tol: float = 1e-10) -> float:
    """Regularized cone potential chi(eps^2 + u) by adaptive quadrature."""
    _validate_chi_args(epsilon, rho)
    if u < 0.0:
        raise ParameterError(f"u must be nonnegative, got {u}")
    if u == 0.0:
        return 0.0
    if rho == 1.0:
        return float(u)  # integrand collapses to the constant 1
    if epsilon == 0.0:
        return float(u ** rho / rho ** 2)

    big_v = math.log1p(u / epsilon ** 2)

    def integrand(v: float) -> float:
        if v < 1e-8:
            return rho * (1.0 + 0.5 * (rho + 1.0) * v)
        return math.expm1(rho * v) / (-math.expm1(-v))

    value, abserr = quad(integrand, 0.0, big_v, epsabs=0.0, epsrel=rel_tol, limit=400)
    pref = epsilon ** (2.0 * rho) / rho
    chi = pref * value
    if abserr * pref > rel_tol * max(abs(chi), 1e-300):
        raise QuadratureError("chi quadrature failed", abserr * pref)
    return float(chi)


def chi_profile(
    epsilon: float, rho: float, u: np.ndarray, rel_tol: float = 1e-11
) -> np.ndarray:
    """Vectorized chi over an array of u >= 0 values.

    Composite Gauss-Legendre on the v-substituted integrand with global panel
    doubling until two refinement levels agree to rel_tol.
    """
    _validate_chi_args(epsilon, rho)
    u = np.asarray(u, dtype=float)
    if np.any(u < 0.0):
        raise ParameterError("u must be nonnegative")
    if rho == 1.0:
        return u.copy()
    if epsilon == 0.0:
        return u ** rho / rho ** 2

    big_v = np.log1p(u / epsilon ** 2)
    pref = epsilon ** (2.0 * rho) / rho

    def composite(panels: int) -> np.ndarray:
        offsets = (np.arange(panels)[:, None] + _GL_X[None, :]).ravel() / panels
        v = big_v[:, None] * offsets[None, :]
        g = np.empty_like(v)
        small = v < 1e-8
        g[small] = rho * (1.0 + 0.5 * (rho + 1.0) * v[small])
        vv = v[~small]
        g[~small] = np.expm1(rho * vv) / (-np.expm1(-vv))
        w = np.tile(_GL_W, panels) / panels
        return big_v * (g @ w)

    prev = composite(8)
    for panels in (16, 32, 64, 128, 256):
        cur = composite(panels)
        err = pref * np.max(np.abs(cur - prev))
        if err <= rel_tol * max(1.0, pref * float(np.max(np.abs(cur)))):
            return pref * cur
        prev = cur
    raise QuadratureError("chi profile quadrature failed to converge", err)


def chi_derivatives(epsilon: float, rho: float, u):
    """Closed-form first and second u-derivatives of chi(eps^2 + u).

    Accepts scalars or arrays; series branches keep both derivatives smooth
    through the cancellation region u << eps^2.
    """
    _validate_chi_args(epsilon, rho)
    scalar = np.isscalar(u)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if rho == 1.0:
        first, second = np.ones_like(u), np.zeros_like(u)
    elif epsilon == 0.0:
        if np.any(u <= 0.0):
            raise ParameterError("u must be positive when epsilon = 0")
        first = u ** (rho - 1.0) / rho
        second = (rho - 1.0) * u ** (rho - 2.0) / rho
    else:
        x = u / epsilon ** 2
        r1, r2, r3 = rho - 1.0, rho - 2.0, rho - 3.0
        small = x < 1e-4
        xs = np.where(small, x, 0.0)
        p_series = 1.0 + r1 * xs / 2.0 + r1 * r2 * xs ** 2 / 6.0 + r1 * r2 * r3 * xs ** 3 / 24.0
        q_series = r1 / 2.0 + r1 * r2 * xs / 3.0 + r1 * r2 * r3 * xs ** 2 / 8.0
        xb = np.where(small, 1.0, x)
        p_full = np.expm1(rho * np.log1p(xb)) / (rho * xb)
        q_full = ((1.0 + xb) ** r1 - p_full) / xb
        p = np.where(small, p_series, p_full)
        q = np.where(small, q_series, q_full)
        first = epsilon ** (2.0 * rho - 2.0) * p
        second = epsilon ** (2.0 * rho - 4.0) * q
    if scalar:
        return float(first[0]), float(second[0])
    return first, second


@dataclass(frozen=True)
class RegularizedBackground:
    """Epsilon-dependent smoothed data on the grid (immutable)."""

    epsilon: float
    k: float
    rho0: float
    rho_inf: float
    chi: np.ndarray
    chip: np.ndarray
    chipp: np.ndarray
    omega_eps_density: np.ndarray
    eta_eps_density: np.ndarray
    f_eps: np.ndarray
    psi_aux: np.ndarray
    nu: float

    def __post_init__(self) -> None:
        for name in (
            "chi", "chip", "chipp", "omega_eps_density",
            "eta_eps_density", "f_eps", "psi_aux",
        ):
            getattr(self, name).setflags(write=False)
        if self.nu <= 0.0 or np.any(self.omega_eps_density <= 0.0):
            raise ParameterError("smoothed metric density must be positive")


def _section_chain(
    epsilon: float, rho: float, w: np.ndarray, hp: np.ndarray, hpp: np.ndarray
):
    """chi(eps^2 + e^h) and its s-derivatives for one divisor section."""
    chi = chi_profile(epsilon, rho, w)
    first, second = chi_derivatives(epsilon, rho, w)
    chip = first * w * hp
    chipp = second * (w * hp) ** 2 + first * w * (hpp + hp ** 2)
    return chi, chip, chipp


def build_regularized_background(
    epsilon: float,
    k: float,
    cone: ConeData,
    bg: BackgroundGeometry,
    psi_rho: float = 0.5,
    psi_ctilde: float = 1.0,
) -> RegularizedBackground:
    """Assemble all epsilon-smoothed profiles for one (epsilon, k)."""
    if epsilon <= 0.0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    if k < 0.0:
        raise ParameterError(f"k must be nonnegative, got {k}")
    w0 = np.exp(bg.h0)
    w_inf = np.exp(bg.h_inf)

    chi0, chip0, chipp0 = _section_chain(epsilon, cone.rho0, w0, bg.h0p, bg.h0pp)
    chi1, chip1, chipp1 = _section_chain(
        epsilon, cone.rho_inf, w_inf, bg.h_infp, bg.h_infpp
    )
    chi = chi0 + chi1
    chip = chip0 + chip1
    chipp = chipp0 + chipp1

    omega = bg.u0pp + k * chipp
    if np.any(omega <= 0.0):
        node = int(np.argmin(omega))
        raise PositivityError(node, float(bg.grid.s[node]), float(omega[node]))

    eta = cone.lam * bg.u0pp.copy()
    for tau, w, hp, hpp in (
        (cone.tau0, w0, bg.h0p, bg.h0pp),
        (cone.tau_inf, w_inf, bg.h_infp, bg.h_infpp),
    ):
        denom = w + epsilon ** 2
        eta += tau * (w * (hpp + hp ** 2) / denom - (w * hp) ** 2 / denom ** 2)

    one_minus_beta = 1.0 - cone.beta
    f_eps = bg.f0 + np.log(omega / bg.u0pp)
    if one_minus_beta != 0.0:
        f_eps = f_eps + one_minus_beta * (
            cone.tau0 * np.log(epsilon ** 2 + w0)
            + cone.tau_inf * np.log(epsilon ** 2 + w_inf)
        )

    psi = psi_ctilde * (
        chi_profile(epsilon, psi_rho, w0) + chi_profile(epsilon, psi_rho, w_inf)
    )

    nu = float(np.min(omega / bg.u0pp))
    return RegularizedBackground(
        epsilon=epsilon,
        k=k,
        rho0=cone.rho0,
        rho_inf=cone.rho_inf,
        chi=chi,
        chip=chip,
        chipp=chipp,
        omega_eps_density=omega,
        eta_eps_density=eta,
        f_eps=f_eps,
        psi_aux=psi,
        nu=nu,
    )


def lower_metric_bound(
    epsilon: float, k: float, cone: ConeData, bg: BackgroundGeometry
) -> float:
    """Largest nu with omega_eps >= nu * omega_0 on the grid.

    The density ratio is 1 + k*chi''(s)/u0''(s), affine in k.
    """
    chipp = _section_chain(epsilon, cone.rho0, np.exp(bg.h0), bg.h0p, bg.h0pp)[2]
    chipp = chipp + _section_chain(
        epsilon, cone.rho_inf, np.exp(bg.h_inf), bg.h_infp, bg.h_infpp
    )[2]
    return float(np.min(1.0 + k * chipp / bg.u0pp))


def select_k(
    cone: ConeData,
    bg: BackgroundGeometry,
    target_nu: float,
    eps_list: tuple[float, ...] = DEFAULT_EPS_SWEEP,
    tol: float = 1e-4,
) -> float:
    """Largest k (bisection, tolerance tol) keeping nu >= target_nu.

    The bound is enforced at the largest sweep epsilon, the smallest one, and
    a linear eps -> 0 extrapolation from the two finest values.
    """
    if not (0.0 < target_nu < 1.0):
        raise ParameterError(
            f"target_nu must lie in (0, 1); nu = {target_nu} is reachable only "
            "by k = 0 (identity smoothing)"
        )
    eps_hi, eps_lo = max(eps_list), min(eps_list)

    def admissible(k: float) -> bool:
        nu_hi = lower_metric_bound(eps_hi, k, cone, bg)
        nu_lo = lower_metric_bound(eps_lo, k, cone, bg)
        nu_lo2 = lower_metric_bound(eps_lo / 2.0, k, cone, bg)
        nu_ext = 2.0 * nu_lo2 - nu_lo
        return min(nu_hi, nu_lo, nu_lo2, nu_ext) >= target_nu

    k_lo = 1e-8
    if not admissible(k_lo):
        raise ParameterError(
            f"even k = {k_lo:g} violates target_nu = {target_nu}"
        )
    k_hi = 1.0
    while admissible(k_hi):
        k_hi *= 2.0
        if k_hi > 1e6:
            return k_hi  # positivity never binds for this configuration
    while k_hi - k_lo > tol * max(1.0, k_lo):
        mid = 0.5 * (k_lo + k_hi)
        if admissible(mid):
            k_lo = mid
        else:
            k_hi = mid
    return k_lo


@dataclass(frozen=True)
class PsiAux:
    """Auxiliary barrier profile with its sup and positivity certificate."""

    profile: np.ndarray
    sup: float
    max_coeff: float  # largest c' with omega_0 + c' * ddbar(psi) >= 0 on the grid


def build_psi_aux(
    epsilon: float,
    rho: float,
    ctilde: float,
    cone: ConeData,
    bg: BackgroundGeometry,
) -> PsiAux:
    """Barrier psi = ctilde * sum_i chi_rho(eps^2 + |s_i|^2) and certificates.

    The reported coefficient is the critical (largest) c' keeping
    u0'' + c' * psi'' positive; any smaller nonnegative value is admissible,
    so a positive return certifies the existence of a small positive barrier
    coefficient.
    """
    if ctilde < 0.0:
        raise ParameterError(f"ctilde must be nonnegative, got {ctilde}")
    if ctilde == 0.0:
        zeros = np.zeros_like(bg.u0pp)
        return PsiAux(profile=zeros, sup=0.0, max_coeff=math.inf)
    _, _, psipp0 = _section_chain(epsilon, rho, np.exp(bg.h0), bg.h0p, bg.h0pp)
    _, _, psipp1 = _section_chain(epsilon, rho, np.exp(bg.h_inf), bg.h_infp, bg.h_infpp)
    psi = ctilde * (
        chi_profile(epsilon, rho, np.exp(bg.h0))
        + chi_profile(epsilon, rho, np.exp(bg.h_inf))
    )
    psipp = ctilde * (psipp0 + psipp1)
    negative = psipp < 0.0
    if np.any(negative):
        max_coeff = float(np.min(bg.u0pp[negative] / -psipp[negative]))
    else:
        max_coeff = math.inf
    return PsiAux(profile=psi, sup=float(np.max(np.abs(psi))), max_coeff=max_coeff)
