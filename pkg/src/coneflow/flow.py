"""Time integration of the scalar Monge-Ampere flow.

With all profiles reduced to s = log|z|^2 the flow for the potential phi
(taken relative to the smoothed metric) reads

    dphi/dt = log(fullDensity / u0'') + F0 + gamma*(k*chi + phi)
              + (1-beta) * sum_i tau_i * log(eps^2 + |s_i|^2)
              + theta_X + c*(k*chi' + phi')

where fullDensity = u0'' + k*chi'' + phi'' must stay positive (the Kahler
condition).  An algebraically identical display uses the twisted Ricci
potential:  log(fullDensity / omegaEps) + F_eps + gamma*(k*chi + phi)
+ theta_X + c*(k*chi' + phi').  Both forms are evaluated on every call and
must agree to 1e-10; the first is returned.

Precision note: near the truncation ends the background density decays to
~e^{-|s_min|}, far below the roundoff floor of a second difference of an
O(1) potential.  The integrators therefore carry phi'' as a prognostic
profile updated by second differences of the small per-step increments,
which keeps the density (and hence the log term) accurate at every node;
recomputing phi'' from scratch is reserved for analysis entry points.

Two integrators are provided.  The default damped-Newton backward Euler
handles the exponential stiffness that the uniform s-grid manufactures near
the truncation ends (the linearized diffusion coefficient is 1/fullDensity).
An embedded Bogacki-Shampine 2(3) pair is kept for cross-validation on
small domains; both hard-reject any step that violates the positivity
floor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Literal

import numpy as np
from scipy.linalg import solve_banded

from .errors import ParameterError, PositivityError, StationaryError, StepError
from .geometry import BackgroundGeometry, ConeData, RadialGrid, VectorFieldData
from .gridops import DiffOps
from .regularization import RegularizedBackground, build_regularized_background

_FORM_CONSISTENCY_TOL = 1e-10
_DT_FLOOR = 1e-12

Scheme = Literal["explicit-adaptive", "semi-implicit-newton"]


@lru_cache(maxsize=32)
def _ops(grid: RadialGrid) -> DiffOps:
    return DiffOps(grid)


@dataclass(frozen=True)
class StepStats:
    """Bookkeeping for the most recent accepted step."""

    dt: float = 0.0
    next_dt: float = 0.0
    newton_iters: int = 0
    rejections: int = 0
    residual: float = 0.0
    converged: bool = True


@dataclass(frozen=True)
class FlowState:
    """Potential profile with its curvature profile and flow velocity.

    phipp is the maintained second s-derivative of phi (see the module
    precision note); fullDensity = omega_eps_density + phipp.
    """

    phi: np.ndarray
    phipp: np.ndarray
    phidot: np.ndarray
    t: float
    step_stats: StepStats = field(default_factory=StepStats)

    def __post_init__(self) -> None:
        self.phi.setflags(write=False)
        self.phipp.setflags(write=False)
        self.phidot.setflags(write=False)


@dataclass(frozen=True)
class FlowConfig:
    """Everything one flow run needs."""

    cone: ConeData
    vf: VectorFieldData
    epsilon: float
    k: float
    grid: RadialGrid
    scheme: Scheme = "semi-implicit-newton"
    dt_init: float = 2e-3
    dt_max: float = 5e-3
    t_end: float = 1.0
    c_eps0: float = 0.0
    newton_tol: float = 1e-11
    rk_tol: float = 1e-8
    positivity_floor: float = 1e-300
    output_cadence: float = 0.25
    psi_rho: float = 0.5
    psi_ctilde: float = 1.0

    def __post_init__(self) -> None:
        if self.scheme not in ("explicit-adaptive", "semi-implicit-newton"):
            raise ParameterError(f"unknown scheme {self.scheme!r}")
        if not (0.0 < self.dt_init <= self.dt_max):
            raise ParameterError("need 0 < dt_init <= dt_max")
        if self.t_end < 0.0:
            raise ParameterError("t_end must be nonnegative")
        if self.positivity_floor <= 0.0:
            raise ParameterError("positivity floor must be positive")
        if self.output_cadence <= 0.0:
            raise ParameterError("output cadence must be positive")

    def build_backgrounds(self) -> tuple[BackgroundGeometry, RegularizedBackground]:
        from .geometry import build_background

        bg = build_background(self.cone, self.vf, self.grid)
        regbg = build_regularized_background(
            self.epsilon, self.k, self.cone, bg, self.psi_rho, self.psi_ctilde
        )
        return bg, regbg


def _checked_density(density: np.ndarray, grid: RadialGrid) -> np.ndarray:
    if np.any(density <= 0.0):
        node = int(np.argmin(density))
        raise PositivityError(node, float(grid.s[node]), float(density[node]))
    return density


def full_density(
    phi: np.ndarray, regbg: RegularizedBackground, grid: RadialGrid
) -> np.ndarray:
    """Metric s-density of omega_phi recomputed from the potential.

    Subject to the roundoff floor described in the module docstring; prefer
    state_density for states produced by the integrators.
    """
    return _checked_density(regbg.omega_eps_density + _ops(grid).d2(phi), grid)


def state_density(state: FlowState, regbg: RegularizedBackground, grid: RadialGrid):
    """Metric s-density of omega_phi from the maintained curvature profile."""
    return _checked_density(regbg.omega_eps_density + state.phipp, grid)


def _rhs_core(phi, density, regbg, bg, cone, vf):
    """Both display forms of the flow velocity at a given density; returns one."""
    ops = _ops(bg.grid)
    phip = ops.d1(phi)
    drift = vf.c * (regbg.k * regbg.chip + phip)
    common = cone.gamma * (regbg.k * regbg.chi + phi) + bg.theta_x + drift

    log_w = 0.0
    if cone.beta != 1.0:
        log_w = (1.0 - cone.beta) * (
            cone.tau0 * np.log(regbg.epsilon ** 2 + np.exp(bg.h0))
            + cone.tau_inf * np.log(regbg.epsilon ** 2 + np.exp(bg.h_inf))
        )
    via_f0 = np.log(density / bg.u0pp) + bg.f0 + log_w + common
    via_feps = np.log(density / regbg.omega_eps_density) + regbg.f_eps + common

    gap = float(np.max(np.abs(via_f0 - via_feps)))
    scale = max(1.0, float(np.max(np.abs(via_f0))))
    if gap > _FORM_CONSISTENCY_TOL * scale:
        raise StepError(
            f"Monge-Ampere display forms disagree by {gap:.3e}", t=math.nan
        )
    return via_f0


def rhs_eval(
    phi: np.ndarray,
    regbg: RegularizedBackground,
    bg: BackgroundGeometry,
    cone: ConeData,
    vf: VectorFieldData,
    phipp: np.ndarray | None = None,
) -> np.ndarray:
    """Flow velocity dphi/dt at the given potential profile.

    When the maintained curvature profile is available, pass it as phipp to
    avoid the second-difference roundoff floor near the truncation.
    """
    grid = bg.grid
    if phipp is None:
        density = full_density(phi, regbg, grid)
    else:
        density = _checked_density(regbg.omega_eps_density + phipp, grid)
    return _rhs_core(phi, density, regbg, bg, cone, vf)


def _newton_banded(ops: DiffOps, density, dt, gam, c):
    """Banded Jacobian of G(delta) = delta - dt*RHS(phi_base + delta)."""
    ab = ops.d2_banded(1.0 / density)
    if c != 0.0:
        ab = ab + ops.d1_banded(c)
    ab[1, :] += gam
    ab *= -dt
    ab[1, :] += 1.0
    return ab


def _try_backward_euler(state, dt, config, regbg, bg):
    """One implicit Euler solve at fixed dt, in increment form.

    Returns (delta, d2delta, iters, residual) or None on Newton failure.
    """
    ops = _ops(config.grid)
    cone, vf = config.cone, config.vf
    floor = config.positivity_floor
    base_density = regbg.omega_eps_density + state.phipp

    def residual_of(delta, d2delta):
        density = base_density + d2delta
        if np.min(density) <= floor:
            return None
        rhs = _rhs_core(state.phi + delta, density, regbg, bg, cone, vf)
        g = delta - dt * rhs
        return g, float(np.max(np.abs(g))), density

    delta = np.zeros_like(state.phi)
    d2delta = np.zeros_like(state.phi)
    res = residual_of(delta, d2delta)
    if res is None:
        return None
    g, gn, density = res
    tol = config.newton_tol * max(1.0, float(np.max(np.abs(state.phi))))
    for iteration in range(26):
        if gn <= tol:
            return delta, d2delta, iteration, gn
        ab = _newton_banded(ops, density, dt, cone.gamma, vf.c)
        ddelta = solve_banded((1, 1), ab, -g)
        # Recover D2*ddelta from the solved linear system instead of
        # differencing: its roundoff then scales with the local density, so
        # the Kahler ratio stays accurate even where the background density
        # is far below the second-difference noise floor.
        d2ddelta = density * (
            (ddelta + g) / dt
            - cone.gamma * ddelta
            - vf.c * ops.d1_matrix_stencil(ddelta)
        )
        sigma, accepted = 1.0, None
        while sigma >= 2.0 ** -24:
            trial = residual_of(delta + sigma * ddelta, d2delta + sigma * d2ddelta)
            if trial is not None and trial[1] < gn:
                accepted = (delta + sigma * ddelta, d2delta + sigma * d2ddelta) + trial
                break
            sigma *= 0.5
        if accepted is None:
            return None
        delta, d2delta, g, gn, density = accepted
    return None


def _step_backward_euler(state, config, regbg, bg, dt_cap):
    dt = state.step_stats.next_dt or config.dt_init
    dt = min(dt, config.dt_max)
    if dt_cap is not None:
        dt = min(dt, dt_cap)
    rejections = 0
    while True:
        result = _try_backward_euler(state, dt, config, regbg, bg)
        if result is not None:
            delta, d2delta, iters, residual = result
            break
        rejections += 1
        dt *= 0.5
        if dt < _DT_FLOOR:
            raise StepError("dt underflow below 1e-12 in implicit step", state.t)
    next_dt = min(dt * 1.3 if iters <= 4 else dt, config.dt_max)
    phi = state.phi + delta
    phipp = state.phipp + d2delta
    density = _checked_density(regbg.omega_eps_density + phipp, config.grid)
    phidot = _rhs_core(phi, density, regbg, bg, config.cone, config.vf)
    stats = StepStats(
        dt=dt, next_dt=next_dt, newton_iters=iters,
        rejections=rejections, residual=residual, converged=True,
    )
    return FlowState(phi=phi, phipp=phipp, phidot=phidot, t=state.t + dt,
                     step_stats=stats)


def _step_rk23(state, config, regbg, bg, dt_cap):
    """Bogacki-Shampine 3(2) embedded pair with positivity rejection."""
    cone, vf = config.cone, config.vf
    floor = config.positivity_floor
    ops = _ops(config.grid)
    base_density = regbg.omega_eps_density + state.phipp

    def f(delta, d2delta):
        density = base_density + d2delta
        if np.min(density) <= floor:
            node = int(np.argmin(density))
            raise PositivityError(node, float(bg.grid.s[node]), float(np.min(density)))
        rhs = _rhs_core(state.phi + delta, density, regbg, bg, cone, vf)
        return rhs, ops.d2(rhs)

    dt = state.step_stats.next_dt or config.dt_init
    dt = min(dt, config.dt_max)
    if dt_cap is not None:
        dt = min(dt, dt_cap)
    rejections = 0
    tol = config.rk_tol
    zero = np.zeros_like(state.phi)
    while True:
        try:
            k1, dk1 = f(zero, zero)
            k2, dk2 = f(0.5 * dt * k1, 0.5 * dt * dk1)
            k3, dk3 = f(0.75 * dt * k2, 0.75 * dt * dk2)
            delta = dt * (2.0 * k1 + 3.0 * k2 + 4.0 * k3) / 9.0
            d2delta = dt * (2.0 * dk1 + 3.0 * dk2 + 4.0 * dk3) / 9.0
            k4, _ = f(delta, d2delta)
        except PositivityError:
            rejections += 1
            dt *= 0.5
            if dt < _DT_FLOOR:
                raise StepError("dt underflow below 1e-12 in explicit step", state.t)
            continue
        err = dt * np.max(
            np.abs(-5.0 * k1 / 72.0 + k2 / 12.0 + k3 / 9.0 - k4 / 8.0)
        )
        scale = tol * max(1.0, float(np.max(np.abs(state.phi))))
        if err <= scale:
            grow = 0.9 * (scale / max(err, 1e-300)) ** (1.0 / 3.0)
            next_dt = min(dt * min(5.0, max(0.2, grow)), config.dt_max)
            stats = StepStats(
                dt=dt, next_dt=next_dt, newton_iters=0,
                rejections=rejections, residual=float(err), converged=True,
            )
            phi = state.phi + delta
            phipp = state.phipp + d2delta
            phidot = _rhs_core(
                phi,
                _checked_density(regbg.omega_eps_density + phipp, config.grid),
                regbg, bg, cone, vf,
            )
            return FlowState(phi=phi, phipp=phipp, phidot=phidot,
                             t=state.t + dt, step_stats=stats)
        rejections += 1
        dt *= max(0.2, 0.9 * (scale / err) ** (1.0 / 3.0))
        if dt < _DT_FLOOR:
            raise StepError("dt underflow below 1e-12 in explicit step", state.t)


def step(
    state: FlowState,
    config: FlowConfig,
    regbg: RegularizedBackground,
    bg: BackgroundGeometry,
    dt_cap: float | None = None,
) -> FlowState:
    """Advance one accepted step (retries and dt control happen inside)."""
    if config.scheme == "semi-implicit-newton":
        return _step_backward_euler(state, config, regbg, bg, dt_cap)
    return _step_rk23(state, config, regbg, bg, dt_cap)


def initial_state(
    config: FlowConfig, regbg: RegularizedBackground, bg: BackgroundGeometry
) -> FlowState:
    phi0 = np.full(config.grid.n, config.c_eps0, dtype=float)
    phipp0 = np.zeros(config.grid.n)
    phidot0 = rhs_eval(phi0, regbg, bg, config.cone, config.vf, phipp=phipp0)
    stats = StepStats(dt=0.0, next_dt=config.dt_init)
    return FlowState(phi=phi0, phipp=phipp0, phidot=phidot0, t=0.0, step_stats=stats)


def snapshot_times(config: FlowConfig) -> np.ndarray:
    if config.t_end == 0.0:
        return np.array([0.0])
    m = int(math.floor(config.t_end / config.output_cadence + 1e-9))
    times = [j * config.output_cadence for j in range(m + 1)]
    if times[-1] < config.t_end - 1e-12:
        times.append(config.t_end)
    times[-1] = config.t_end
    return np.asarray(times)


def run(config: FlowConfig, with_diagnostics: bool = True, settings=None):
    """Integrate from phi = c_eps0 to t_end, emitting snapshots at the cadence.

    Returns (trajectory, records): FlowState snapshots and one diagnostics
    record per snapshot (empty list when with_diagnostics is False).
    """
    from .diagnostics import DEFAULT_SETTINGS, compute_record  # avoid a cycle

    if settings is None:
        settings = DEFAULT_SETTINGS
    bg, regbg = config.build_backgrounds()
    state = initial_state(config, regbg, bg)
    trajectory = [state]
    records = []
    if with_diagnostics:
        records.append(
            compute_record(trajectory, regbg, bg, config.cone, config.vf, settings)
        )
    for target in snapshot_times(config)[1:]:
        while state.t < target - 1e-12:
            try:
                state = step(state, config, regbg, bg, dt_cap=target - state.t)
            except (StepError, PositivityError) as exc:
                raise StepError(f"flow run failed: {exc}", state.t) from exc
        state = replace(state, t=target)  # clamp accumulated roundoff
        trajectory.append(state)
        if with_diagnostics:
            records.append(
                compute_record(trajectory, regbg, bg, config.cone, config.vf, settings)
            )
    return trajectory, records


def _stationary_newton(state, config, regbg, bg, tol, max_iter=80):
    """Damped Newton on RHS(phi) = 0, in increment form off the flow state."""
    ops = _ops(config.grid)
    cone, vf = config.cone, config.vf
    pin = config.grid.n // 2 if cone.gamma == 0.0 else None
    base_density = regbg.omega_eps_density + state.phipp
    # Direct second differences of the increments are preferable whenever the
    # density sits far above their roundoff floor; the density-scaled
    # recovery is kept for deeply truncated grids.
    d2_floor = 4.0e3 * np.finfo(float).eps / ops.h ** 2 * max(
        1.0, float(np.max(np.abs(state.phi)))
    )
    use_direct = float(np.min(base_density)) > d2_floor

    def residual_of(delta, d2delta):
        phi = state.phi + delta
        if use_direct:
            density = regbg.omega_eps_density + ops.d2(phi)
        else:
            density = base_density + d2delta
        if np.min(density) <= config.positivity_floor:
            return None
        rhs = _rhs_core(phi, density, regbg, bg, cone, vf)
        if pin is not None:
            rhs = rhs - rhs[pin]  # gauge: stationarity modulo constants
        return rhs, float(np.max(np.abs(rhs))), density

    delta = np.zeros_like(state.phi)
    d2delta = np.zeros_like(state.phi)
    rhs, rn, density = residual_of(delta, d2delta)
    for _ in range(max_iter):
        if rn <= tol:
            break
        ab = ops.d2_banded(1.0 / density)
        if vf.c != 0.0:
            ab = ab + ops.d1_banded(vf.c)
        ab[1, :] += cone.gamma
        rhs_solve = rhs.copy()
        if pin is not None:
            ab[1, pin] = 1.0
            if pin + 1 < config.grid.n:
                ab[0, pin + 1] = 0.0
            if pin - 1 >= 0:
                ab[2, pin - 1] = 0.0
            rhs_solve[pin] = 0.0
        ddelta = solve_banded((1, 1), ab, -rhs_solve)
        if use_direct:
            d2ddelta = ops.d2(ddelta)
        else:
            # Same density-scaled recovery of D2*ddelta as in the implicit step.
            d2ddelta = density * (
                -rhs_solve
                - cone.gamma * ddelta
                - vf.c * ops.d1_matrix_stencil(ddelta)
            )
            if pin is not None:
                d2ddelta[pin] = ops.d2(ddelta)[pin]  # formula invalid on the pinned row
        sigma, accepted = 1.0, None
        while sigma >= 2.0 ** -24:
            trial = residual_of(delta + sigma * ddelta, d2delta + sigma * d2ddelta)
            if trial is not None and trial[1] < rn:
                accepted = (delta + sigma * ddelta, d2delta + sigma * d2ddelta) + trial
                break
            sigma *= 0.5
        if accepted is None:
            break
        delta, d2delta, rhs, rn, density = accepted
    return state.phi + delta, state.phipp + d2delta, rn


def stationary_solve(config: FlowConfig, tol: float = 1e-9) -> np.ndarray:
    """Regularized soliton profile: flow to near-stationarity, then Newton.

    For gamma = 0 the equation only determines phi up to constants; the solve
    then pins the central node and measures the residual modulo constants.
    """
    bg, regbg = config.build_backgrounds()
    state = initial_state(config, regbg, bg)
    switch = 1e-3
    while state.t < config.t_end and float(np.max(np.abs(state.phidot))) > switch:
        state = step(state, config, regbg, bg, dt_cap=config.t_end - state.t)
    # Re-anchor the curvature profile on the potential itself when the
    # truncation permits (it accumulates solver roundoff along the flow);
    # then the converged residual is exactly the one recomputed from phi.
    rebuilt = _ops(config.grid).d2(state.phi)
    if np.min(regbg.omega_eps_density + rebuilt) > config.positivity_floor:
        state = replace(state, phipp=rebuilt)
    phi, _, rn = _stationary_newton(state, config, regbg, bg, tol)
    if rn > tol:
        raise StationaryError("stationary solve did not converge", rn)
    return phi
