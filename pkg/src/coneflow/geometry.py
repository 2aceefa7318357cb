"""Exact background data of the model problem.

The model surface is the sphere with the rotation-invariant reference metric
in the class of total area 4*pi, reduced to the real variable s = log|z|^2:

    u0(s)   = 2 log(1 + e^s)          reference Kahler potential
    u0''(s) = 2 e^s / (1+e^s)^2       its metric s-density (positive)

The momentum coordinate u0'(s) increases from 0 to 2.  The divisor is
D = tau0 * {z=0} + tauInf * {z=inf} with weights constrained by
tau0 + tauInf = 2*lambda (anticanonical degree).  The defining sections
carry hermitian potentials h_i(s) = log|s_i|^2; smoothness at the opposite
pole together with first-order vanishing forces

    h0(s)   = s - log(1 + e^s)   + k0   = -log(1 + e^-s) + k0
    hInf(s) = -s - log(1 + e^-s) + kInf = -log(1 + e^s)  + kInf

whose combined curvature satisfies (tau0*h0 + tauInf*hInf)'' = -lambda * u0''
exactly when the degree constraint holds.  The gauge constants k0, kInf are
fixed by max-normalization over the grid, so |s_i|^2 <= 1.

The holomorphic field X = c * z d/dz acts on invariant functions as
X(f) = c * f'(s); its Hamiltonian against the reference metric is
theta_X = c * u0' + kappa with kappa fixed by the exp-weighted area
normalization.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from scipy.integrate import cumulative_trapezoid, simpson
from scipy.special import expit

from .errors import ParameterError, QuadratureError

TOTAL_AREA = 4.0 * math.pi


def gamma(lam: float, beta: float) -> float:
    """Soliton constant 1 - lambda*(1 - beta); rejects negative values."""
    if not lam > 0.0:
        raise ParameterError(f"lambda must be positive, got {lam}")
    if not (0.0 < beta <= 1.0):
        raise ParameterError(f"beta must lie in (0, 1], got {beta}")
    g = 1.0 - lam * (1.0 - beta)
    if g < 0.0:
        raise ParameterError(
            f"gamma = 1 - lambda*(1-beta) = {g} < 0 (outside the admissible range)"
        )
    return g


@dataclass(frozen=True)
class ConeData:
    """Cone parameters: divisor weights, angle parameter, derived exponents."""

    lam: float
    beta: float
    tau0: float
    tau_inf: float

    def __post_init__(self) -> None:
        g = gamma(self.lam, self.beta)  # validates lam, beta, gamma >= 0
        if self.tau0 <= 0.0 or self.tau_inf <= 0.0:
            raise ParameterError("divisor weights tau must be positive")
        degree = 2.0 * self.lam
        if abs(self.tau0 + self.tau_inf - degree) > 1e-12 * max(1.0, degree):
            raise ParameterError(
                f"degree constraint violated: tau0 + tauInf = "
                f"{self.tau0 + self.tau_inf} != 2*lambda = {degree}"
            )
        for name, rho in (("rho0", self.rho0), ("rhoInf", self.rho_inf)):
            if not (0.0 < rho <= 1.0):
                raise ParameterError(
                    f"cone exponent {name} = {rho} outside (0, 1]"
                )
        del g

    @property
    def gamma(self) -> float:
        return 1.0 - self.lam * (1.0 - self.beta)

    @property
    def rho0(self) -> float:
        return 1.0 - (1.0 - self.beta) * self.tau0

    @property
    def rho_inf(self) -> float:
        return 1.0 - (1.0 - self.beta) * self.tau_inf

    @property
    def taus(self) -> tuple[float, float]:
        return (self.tau0, self.tau_inf)

    @property
    def rhos(self) -> tuple[float, float]:
        return (self.rho0, self.rho_inf)


@dataclass(frozen=True)
class VectorFieldData:
    """Coefficient of X = c * z d/dz.

    For every real c the imaginary part of X generates the standard circle
    rotation, so the torus-invariance hypothesis holds automatically in this
    model.
    """

    c: float = 0.0


@dataclass(frozen=True)
class RadialGrid:
    """Uniform grid in s = log|z|^2 on [s_min, s_max]."""

    s_min: float = -30.0
    s_max: float = 30.0
    n: int = 2049

    def __post_init__(self) -> None:
        if not (self.s_min < 0.0 < self.s_max):
            raise ParameterError(
                f"grid must straddle s=0: got [{self.s_min}, {self.s_max}]"
            )
        if self.n < 3:
            raise ParameterError("grid needs n >= 3 for second differences")

    @property
    def spacing(self) -> float:
        return (self.s_max - self.s_min) / (self.n - 1)

    @cached_property
    def s(self) -> np.ndarray:
        s = np.linspace(self.s_min, self.s_max, self.n)
        s.setflags(write=False)
        return s


@dataclass(frozen=True)
class BackgroundGeometry:
    """Reference geometry sampled on the radial grid (immutable)."""

    grid: RadialGrid
    u0: np.ndarray
    u0p: np.ndarray
    u0pp: np.ndarray
    h0: np.ndarray
    h0p: np.ndarray
    h0pp: np.ndarray
    h_inf: np.ndarray
    h_infp: np.ndarray
    h_infpp: np.ndarray
    theta_x: np.ndarray
    f0: np.ndarray
    total_area: float

    def __post_init__(self) -> None:
        for name in (
            "u0", "u0p", "u0pp", "h0", "h0p", "h0pp",
            "h_inf", "h_infp", "h_infpp", "theta_x", "f0",
        ):
            arr = getattr(self, name)
            if arr.shape != (self.grid.n,):
                raise ParameterError(f"profile {name} has wrong length")
            arr.setflags(write=False)
        if np.any(self.u0pp <= 0.0):
            raise ParameterError("reference metric density u0'' must be positive")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


def _grid_quadrature(values: np.ndarray, grid: RadialGrid, rel_tol: float = 1e-8):
    """Simpson integral with a Richardson error estimate (full vs. halved grid).

    Returns (integral, error_estimate); raises QuadratureError when the
    estimate exceeds rel_tol relative to the integral.
    """
    h = grid.spacing
    fine = simpson(values, dx=h)
    coarse = simpson(values[::2], dx=2.0 * h)
    err = abs(fine - coarse) / 15.0
    if err > rel_tol * max(1.0, abs(fine)):
        raise QuadratureError(
            "grid quadrature did not converge (grid too coarse)", err
        )
    return float(fine), float(err)


def _weighted_area(exponent: np.ndarray, u0p, u0pp, grid: RadialGrid) -> float:
    """int e^{exponent} u0'' ds over the whole line, tails included.

    Beyond the truncation every admissible exponent profile is constant to
    O(e^{-|s|}), so the missing caps contribute e^{exponent(end)} times the
    momentum deficit at that end.
    """
    body, _ = _grid_quadrature(np.exp(exponent) * u0pp, grid)
    tail_lo = math.exp(exponent[0]) * u0p[0]
    tail_hi = math.exp(exponent[-1]) * (2.0 - u0p[-1])
    return body + tail_lo + tail_hi


def build_fubini_study(grid: RadialGrid) -> BackgroundGeometry:
    """Reference metric data and its Ricci potential (divisor fields zeroed).

    The potential u0 = 2 log(1+e^s) satisfies Ric = omega exactly; F0 is
    nevertheless computed from the defining identity
    F0'' = (log u0'')'' + u0'' with decay and area normalization, which
    guards the normalization chain against drift.
    """
    s = grid.s
    sig = expit(s)        # e^s / (1 + e^s)
    sig_neg = expit(-s)   # 1 - sig, cancellation-free at the ends
    u0 = 2.0 * np.logaddexp(0.0, s)
    u0p = 2.0 * sig
    u0pp = 2.0 * sig * sig_neg

    # F0' = (log u0'')' + u0' + C, with C fixed by decay at both poles and
    # (log u0'')' = 1 - u0' analytically for this background.
    dlog_u0pp = sig_neg - sig
    f0p_raw = dlog_u0pp + u0p
    c_decay = -0.5 * (f0p_raw[0] + f0p_raw[-1])
    f0p = f0p_raw + c_decay
    f0 = np.concatenate(([0.0], cumulative_trapezoid(f0p, dx=grid.spacing)))
    f0 -= f0[np.argmin(np.abs(s))]
    mass = _weighted_area(-f0, u0p, u0pp, grid)
    f0 = f0 + math.log(mass / 2.0)  # makes 2*pi*int(e^-F0 u0'') = 4*pi

    zeros = np.zeros_like(s)
    return BackgroundGeometry(
        grid=grid,
        u0=_frozen(u0),
        u0p=_frozen(u0p),
        u0pp=_frozen(u0pp),
        h0=_frozen(zeros),
        h0p=_frozen(zeros),
        h0pp=_frozen(zeros),
        h_inf=_frozen(zeros),
        h_infp=_frozen(zeros),
        h_infpp=_frozen(zeros),
        theta_x=_frozen(zeros),
        f0=_frozen(f0),
        total_area=TOTAL_AREA,
    )


def divisor_potentials(cone: ConeData, grid: RadialGrid) -> tuple[np.ndarray, np.ndarray]:
    """Hermitian potentials h_i = log|s_i|^2 of the two divisor sections.

    First-order vanishing at the own pole and smoothness at the opposite one
    force unit coefficients on the log(1+e^{+-s}) corrections, and then the
    curvature identity (tau0*h0 + tauInf*hInf)'' = -lambda*u0'' is exactly the
    degree constraint tau0 + tauInf = 2*lambda (validated by ConeData).
    Normalization: max over the grid of each h_i is 0.
    """
    degree = 2.0 * cone.lam
    if abs(cone.tau0 + cone.tau_inf - degree) > 1e-12 * max(1.0, degree):
        raise ParameterError("degree constraint violated for divisor potentials")
    s = grid.s
    h0 = -np.logaddexp(0.0, -s)   # s - log(1+e^s)
    h_inf = -np.logaddexp(0.0, s)  # -s - log(1+e^-s)
    h0 = h0 - h0.max()
    h_inf = h_inf - h_inf.max()
    return _frozen(h0), _frozen(h_inf)


def _divisor_derivatives(grid: RadialGrid):
    """Analytic first/second s-derivatives of the divisor potentials."""
    sig = expit(grid.s)
    sig_neg = expit(-grid.s)
    sigp = sig * sig_neg
    return (sig_neg, -sigp), (-sig, -sigp)


def theta_potential(vf: VectorFieldData, bg: BackgroundGeometry) -> np.ndarray:
    """Hamiltonian potential of X against the reference metric.

    theta = c * u0' + kappa, with kappa the unique constant giving
    2*pi*int(e^theta u0'' ds) = total area.  X applied to any invariant
    potential f is c * f'(s), which makes the defining contraction identity
    automatic.
    """
    c = vf.c
    if c == 0.0:
        return _frozen(np.zeros_like(bg.u0p))
    weight = _weighted_area(c * bg.u0p, bg.u0p, bg.u0pp, bg.grid)
    kappa = math.log(2.0 / weight)
    return _frozen(c * bg.u0p + kappa)


def check_X_logsD_bound(
    vf: VectorFieldData, cone: ConeData, bg: BackgroundGeometry
) -> float:
    """Grid supremum of |X(log|s_D|^2)| = |c*(tau0*h0' + tauInf*hInf')|.

    Finite by construction: X is tangent to both divisor points, so the
    log-derivative profile stays bounded (its pole limits are c*tau0 and
    -c*tauInf).
    """
    profile = vf.c * (cone.tau0 * bg.h0p + cone.tau_inf * bg.h_infp)
    return float(np.max(np.abs(profile)))


def build_background(
    cone: ConeData, vf: VectorFieldData, grid: RadialGrid
) -> BackgroundGeometry:
    """Assemble the complete reference geometry for one model configuration."""
    bg = build_fubini_study(grid)
    h0, h_inf = divisor_potentials(cone, grid)
    (h0p, h0pp), (h_infp, h_infpp) = _divisor_derivatives(grid)
    bg = replace(
        bg,
        h0=h0,
        h0p=_frozen(h0p),
        h0pp=_frozen(h0pp),
        h_inf=h_inf,
        h_infp=_frozen(h_infp),
        h_infpp=_frozen(h_infpp),
    )
    theta = theta_potential(vf, bg)
    return replace(bg, theta_x=theta)
