"""Monitored quantities for every a-priori estimate of the construction.

All diagnostics are pure functions of immutable inputs.  In the 1-dimensional
reduction the metric of omega_phi is the s-density

    fullDensity = u0'' + k*chi'' + phi''

and the monitored quantities specialize to

    trace ratios      max fullDensity/omegaEps and its reciprocal max
    Calabi quantity   S = (d/ds log(fullDensity/u0''))^2 / fullDensity
    curvature         |Rm| = |(log fullDensity)''| / fullDensity
    cone exponent     least-squares slope of log fullDensity near a pole
    soliton residual  sup |(dphi/dt)''|, the s-density of the metric-flow
                      right-hand side (vanishes exactly at stationary points)
    weak residual     the flow equation tested against compactly supported
                      space-time bumps, with the divisor term in either its
                      smoothed or its limiting point-mass form
    Holder seminorm   sup |phi(x)-phi(y)| / d0(x,y)^alpha over a
                      deterministic pair schedule in the reference distance
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import cumulative_simpson, simpson
from scipy.interpolate import CubicSpline

from .errors import ParameterError, WindowError
from .flow import FlowState, rhs_eval, state_density, _ops
from .geometry import BackgroundGeometry, ConeData, VectorFieldData
from .gridops import interior_window, window_mask
from .regularization import RegularizedBackground

JSON_FIELDS: tuple[tuple[str, str], ...] = (
    ("t", "t"),
    ("supPhi", "sup_phi"),
    ("supPhidot", "sup_phidot"),
    ("traceEpsPhi", "trace_eps_phi"),
    ("tracePhiEps", "trace_phi_eps"),
    ("calabiS", "calabi_s"),
    ("rmMax", "rm_max"),
    ("supXphi", "sup_x_phi"),
    ("coneExp0", "cone_exp0"),
    ("coneExpInf", "cone_exp_inf"),
    ("solitonResidual", "soliton_residual"),
    ("weakResidual", "weak_residual"),
    ("holderSeminorm", "holder_seminorm"),
)

CSV_HEADER = ",".join(name for name, _ in JSON_FIELDS)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


@dataclass(frozen=True)
class DiagnosticsRecord:
    """All monitored quantities at one time snapshot.

    The curvature-type fields (calabiS, rmMax, solitonResidual) are reported
    on the compact interior window [s_min+m, s_max-m] (default m = 5),
    mirroring bounds that hold away from the divisor; calabiS and rmMax are
    additionally restricted to nodes where the metric density is large enough
    for their density-divided second differences to be resolvable in double
    precision.  Sup fields and trace ratios are global grid maxima.
    """

    t: float
    sup_phi: float
    sup_phidot: float
    trace_eps_phi: float
    trace_phi_eps: float
    calabi_s: float
    rm_max: float
    sup_x_phi: float
    cone_exp0: float
    cone_exp_inf: float
    soliton_residual: float
    weak_residual: float
    holder_seminorm: float

    def __post_init__(self) -> None:
        for name, attr in JSON_FIELDS:
            v = getattr(self, attr)
            if not math.isfinite(v):
                raise ParameterError(f"diagnostic field {name} is not finite: {v}")
        if self.trace_eps_phi * self.trace_phi_eps < 1.0 - 1e-12:
            raise ParameterError("trace ratio maxima violate their reciprocity bound")

    def to_json_line(self) -> str:
        parts = ", ".join(
            f'"{name}": {_fmt(getattr(self, attr))}' for name, attr in JSON_FIELDS
        )
        return "{" + parts + "}"

    def to_csv_row(self) -> str:
        return ",".join(_fmt(getattr(self, attr)) for _, attr in JSON_FIELDS)


@dataclass(frozen=True)
class DiagnosticsSettings:
    """Knobs for the per-snapshot diagnostic battery."""

    window_margin: float = 5.0
    holder_alpha: float = 0.75
    cone_fit_budget: float = 0.05  # relative slope-bias budget for auto windows
    # Curvature-type quantities divide second differences by the metric
    # density; below this density double precision cannot resolve them,
    # so the record window is intersected with the resolvable set.
    curvature_density_floor: float = 1e-6


DEFAULT_SETTINGS = DiagnosticsSettings()


def resolvable_window(
    regbg: RegularizedBackground,
    bg: BackgroundGeometry,
    margin: float,
    floor: float = 1e-6,
) -> tuple[float, float]:
    """Margin window intersected with {omega_eps density >= floor}."""
    lo, hi = interior_window(bg.grid, margin)
    ok = regbg.omega_eps_density >= floor
    s = bg.grid.s[ok]
    if s.size < 4:
        return lo, hi
    return max(lo, float(s.min())), min(hi, float(s.max()))


def _mask_for(grid, window) -> np.ndarray:
    if window is None:
        return np.ones(grid.n, dtype=bool)
    mask = window_mask(grid, *window)
    if int(mask.sum()) < 4:
        raise WindowError(f"window {window} holds fewer than 4 nodes")
    return mask


# ---------------------------------------------------------------------------
# pointwise quantities
# ---------------------------------------------------------------------------

def trace_ratios(
    state: FlowState,
    regbg: RegularizedBackground,
    bg: BackgroundGeometry,
    window=None,
) -> tuple[float, float]:
    """Grid maxima of tr_{omega_eps} omega_phi and of its reciprocal."""
    mask = _mask_for(bg.grid, window)
    ratio = state_density(state, regbg, bg.grid) / regbg.omega_eps_density
    return float(np.max(ratio[mask])), float(np.max(1.0 / ratio[mask]))


def calabi_profile(density: np.ndarray, bg: BackgroundGeometry) -> np.ndarray:
    """Nodewise Calabi quantity of a metric s-density against u0''."""
    ops = _ops(bg.grid)
    slope = ops.d1(np.log(density / bg.u0pp))
    return slope ** 2 / density


def calabi_S(
    state: FlowState,
    bg: BackgroundGeometry,
    regbg: RegularizedBackground,
    window=None,
) -> float:
    mask = _mask_for(bg.grid, window)
    profile = calabi_profile(state_density(state, regbg, bg.grid), bg)
    return float(np.max(profile[mask]))


def curvature_profile(density: np.ndarray, grid) -> np.ndarray:
    """Nodewise |Rm| of a metric s-density (sectional curvature magnitude)."""
    return np.abs(_ops(grid).d2(np.log(density))) / density


def curvature_max(
    state: FlowState,
    bg: BackgroundGeometry,
    regbg: RegularizedBackground,
    window=None,
) -> float:
    mask = _mask_for(bg.grid, window)
    profile = curvature_profile(state_density(state, regbg, bg.grid), bg.grid)
    return float(np.max(profile[mask]))


def sup_bounds(state: FlowState) -> tuple[float, float]:
    return float(np.max(np.abs(state.phi))), float(np.max(np.abs(state.phidot)))


def x_phi_sup(
    state: FlowState,
    vf: VectorFieldData,
    regbg: RegularizedBackground,
    bg: BackgroundGeometry,
) -> float:
    """sup |X(k*chi + phi)| = sup |c * (k*chi' + phi')|."""
    phip = _ops(bg.grid).d1(state.phi)
    return float(np.max(np.abs(vf.c * (regbg.k * regbg.chip + phip))))


# ---------------------------------------------------------------------------
# cone-exponent recovery
# ---------------------------------------------------------------------------

def cone_exponent_fit(
    state: FlowState,
    regbg: RegularizedBackground,
    bg: BackgroundGeometry,
    window: tuple[float, float],
) -> float:
    """Least-squares slope of log(fullDensity) against s over the window."""
    mask = _mask_for(bg.grid, window)
    s = bg.grid.s[mask]
    y = np.log(state_density(state, regbg, bg.grid)[mask])
    slope = np.polyfit(s, y, 1)[0]
    return float(slope)


def auto_cone_window(
    regbg: RegularizedBackground,
    bg: BackgroundGeometry,
    cone: ConeData,
    pole: str,
    rel_budget: float = 0.05,
) -> tuple[float, float] | None:
    """Fit window near one pole where both slope contaminations are budgeted.

    Two biases pull the log-density slope away from the cone exponent: the
    eps-smoothing (weight (1-rho)/(1+|s_i|^2/eps^2)) and the reference
    density (weight (1-rho)*u0''/(k*chi'')).  The window keeps each below its
    share of rel_budget*rho at every node; None when no 4-node window exists.
    """
    if pole not in ("0", "inf"):
        raise ParameterError(f"pole must be '0' or 'inf', got {pole!r}")
    rho = cone.rho0 if pole == "0" else cone.rho_inf
    h = bg.h0 if pole == "0" else bg.h_inf
    side = bg.grid.s <= -1.0 if pole == "0" else bg.grid.s >= 1.0
    if regbg.k == 0.0 or rho == 1.0:
        return None
    delta1 = rel_budget * rho / 3.0
    delta2 = 2.0 * rel_budget * rho / 3.0
    nu = np.exp(h) / regbg.epsilon ** 2
    smooth_ok = (1.0 - rho) / (1.0 + nu) <= delta1
    positive = regbg.k * regbg.chipp > 0.0
    contrast = np.zeros_like(nu, dtype=bool)
    contrast[positive] = (
        (1.0 - rho) * bg.u0pp[positive] / (regbg.k * regbg.chipp[positive]) <= delta2
    )
    mask = side & smooth_ok & positive & contrast
    if int(mask.sum()) < 4:
        return None
    s = bg.grid.s[mask]
    return float(s.min()), float(s.max())


# ---------------------------------------------------------------------------
# soliton residual
# ---------------------------------------------------------------------------

def soliton_residual(
    state: FlowState,
    regbg: RegularizedBackground,
    bg: BackgroundGeometry,
    cone: ConeData,
    vf: VectorFieldData,
    window=None,
) -> float:
    """sup over the window of the metric-flow right-hand-side density.

    The Monge-Ampere flow is the potential form of the metric flow, so the
    stationarity defect is exactly the s-density of dphi/dt, i.e. the second
    s-derivative of the scalar right-hand side.  This vanishes to solver
    tolerance at discrete stationary points; agreement with the curvature
    assembly (soliton_residual_geometric) holds at discretization order.
    """
    if window is None:
        window = interior_window(bg.grid, DEFAULT_SETTINGS.window_margin)
    mask = _mask_for(bg.grid, window)
    rhs = rhs_eval(state.phi, regbg, bg, cone, vf, phipp=state.phipp)
    return float(np.max(np.abs(_ops(bg.grid).d2(rhs)[mask])))


def soliton_residual_geometric(
    state: FlowState,
    regbg: RegularizedBackground,
    bg: BackgroundGeometry,
    cone: ConeData,
    vf: VectorFieldData,
    window=None,
) -> float:
    """Same defect assembled from curvature, metric, smoothed divisor, drift."""
    if window is None:
        window = interior_window(bg.grid, DEFAULT_SETTINGS.window_margin)
    mask = _mask_for(bg.grid, window)
    ops = _ops(bg.grid)
    density = state_density(state, regbg, bg.grid)
    residual = (
        ops.d2(np.log(density))
        + cone.gamma * density
        + (1.0 - cone.beta) * regbg.eta_eps_density
        + vf.c * ops.d1(density)
    )
    return float(np.max(np.abs(residual[mask])))


# ---------------------------------------------------------------------------
# weak (distributional) residual
# ---------------------------------------------------------------------------

def _bump(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    return out


def _bump_d1(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    q = 1.0 - xi ** 2
    out[inside] = np.exp(-1.0 / q) * (-2.0 * xi / q ** 2)
    return out


def _bump_d2(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    q = 1.0 - xi ** 2
    out[inside] = np.exp(-1.0 / q) * (
        4.0 * xi ** 2 / q ** 4 + (-2.0 - 6.0 * xi ** 2) / q ** 3
    )
    return out


@dataclass(frozen=True)
class SpaceTimeBump:
    """Product test form zeta(s,t) = B((s-c)/w) * B((2t-t0-t1)/(t1-t0))."""

    s_center: float
    s_width: float
    t_lo: float
    t_hi: float

    def validate(self, grid, t_end: float) -> None:
        if (
            self.s_center - self.s_width <= grid.s_min
            or self.s_center + self.s_width >= grid.s_max
        ):
            raise WindowError(
                "test form support touches the grid boundary: "
                f"[{self.s_center - self.s_width}, {self.s_center + self.s_width}]"
            )
        if not (0.0 <= self.t_lo < self.t_hi <= t_end + 1e-12):
            raise WindowError("test form time support outside the trajectory range")

    def space(self, s: np.ndarray):
        x = (s - self.s_center) / self.s_width
        return (
            _bump(x),
            _bump_d1(x) / self.s_width,
            _bump_d2(x) / self.s_width ** 2,
        )

    def time(self, t: float) -> tuple[float, float]:
        mid, half = 0.5 * (self.t_lo + self.t_hi), 0.5 * (self.t_hi - self.t_lo)
        x = np.array([(t - mid) / half])
        return float(_bump(x)[0]), float(_bump_d1(x)[0] / half)


def default_battery(t_end: float) -> tuple[SpaceTimeBump, ...]:
    """Six bumps: three interior s-centers times two time profiles."""
    forms = []
    for center in (-2.5, 0.0, 2.5):
        forms.append(SpaceTimeBump(center, 3.5, 0.05 * t_end, 0.9 * t_end))
        forms.append(SpaceTimeBump(center, 3.5, 0.35 * t_end, 0.98 * t_end))
    return tuple(forms)


def weak_residual(
    trajectory: list[FlowState],
    battery,
    regbg: RegularizedBackground,
    bg: BackgroundGeometry,
    cone: ConeData,
    vf: VectorFieldData,
    rhs_form: str = "epsilon",
) -> float:
    """Battery maximum of the distributional flow-equation defect.

    rhs_form 'epsilon' pairs the smoothed divisor current; 'conical' pairs
    the limiting right-hand side, whose divisor part consists of the exact
    point masses 2*pi*(1-beta)*tau_i at the poles (zero against admissible
    test forms, which must vanish near the truncation) plus the reference
    term; the curvature pairing always moves both derivatives onto the test
    form, so no derivative of the (possibly nearly singular) density is
    taken.
    """
    if len(trajectory) < 2:
        raise ParameterError("weak residual needs at least 2 snapshots")
    if rhs_form not in ("epsilon", "conical"):
        raise ParameterError(f"unknown rhs_form {rhs_form!r}")
    grid = bg.grid
    s, hgrid = grid.s, grid.spacing
    times = np.array([st.t for st in trajectory])
    t_end = float(times[-1])
    one_minus_beta = 1.0 - cone.beta

    if rhs_form == "epsilon":
        div_log = cone.tau0 * np.log(
            np.exp(bg.h0) + regbg.epsilon ** 2
        ) + cone.tau_inf * np.log(np.exp(bg.h_inf) + regbg.epsilon ** 2)
    else:
        div_log = cone.tau0 * bg.h0 + cone.tau_inf * bg.h_inf

    densities = [state_density(st, regbg, grid) for st in trajectory]
    worst = 0.0
    for form in battery:
        form.validate(grid, t_end)
        zeta, zeta_p, zeta_pp = form.space(s)
        integrand = np.empty_like(times)
        for m, density in enumerate(densities):
            tw, twdot = form.time(float(times[m]))
            pair_omega = 2.0 * math.pi * simpson(density * zeta, dx=hgrid)
            ric = 2.0 * math.pi * simpson(np.log(density) * zeta_pp, dx=hgrid)
            eta = one_minus_beta * 2.0 * math.pi * simpson(
                cone.lam * bg.u0pp * zeta + div_log * zeta_pp, dx=hgrid
            )
            lie = -2.0 * math.pi * vf.c * simpson(density * zeta_p, dx=hgrid)
            rhs_pair = ric + cone.gamma * pair_omega + eta + lie
            integrand[m] = pair_omega * twdot + rhs_pair * tw
        worst = max(worst, abs(float(np.trapezoid(integrand, times))))
    return worst


# ---------------------------------------------------------------------------
# Holder seminorm
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8)
def _arc_length_table(s_min: float, s_max: float):
    """Dense cumulative quadrature of sqrt(u0''/2), the meridian arc length.

    Built on a fixed fine lattice independent of any run grid, so Holder
    values are stable under grid refinement.
    """
    s = np.linspace(s_min, s_max, 16385)
    sig = 1.0 / (1.0 + np.exp(-s))
    sig_neg = 1.0 / (1.0 + np.exp(s))
    integrand = np.sqrt(sig * sig_neg)
    cum = cumulative_simpson(integrand, dx=s[1] - s[0], initial=0.0)
    return s, cum


def reference_distance(a, b, grid) -> np.ndarray:
    """Distance between latitude circles s=a and s=b in the reference metric."""
    s_tab, cum = _arc_length_table(grid.s_min, grid.s_max)
    da = np.interp(a, s_tab, cum)
    db = np.interp(b, s_tab, cum)
    return np.abs(db - da)


def _pair_lattice(grid, window) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = window
    base = np.linspace(lo, hi, 96)
    seps = 0.25 * 1.45 ** np.arange(14)
    seps = seps[seps <= (hi - lo)]
    a = np.repeat(base, len(seps))
    b = a + np.tile(seps, len(base))
    keep = b <= hi
    return a[keep], b[keep]


def holder_seminorm(
    phi: np.ndarray,
    alpha: float,
    bg: BackgroundGeometry,
    window: tuple[float, float] | None = None,
) -> float:
    """sup |phi(a)-phi(b)| / d0(a,b)^alpha over a deterministic pair schedule.

    Pairs live on a fixed s-lattice (stride schedule in s-units, profile
    values by cubic spline), which keeps the estimate stable across grids.
    """
    if not (0.0 < alpha < 1.0):
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    grid = bg.grid
    if window is None:
        window = (grid.s_min + 1.0, grid.s_max - 1.0)
    a, b = _pair_lattice(grid, window)
    spline = CubicSpline(grid.s, phi)
    num = np.abs(spline(a) - spline(b))
    den = reference_distance(a, b, grid) ** alpha
    return float(np.max(num / den))


# ---------------------------------------------------------------------------
# assembled record
# ---------------------------------------------------------------------------

def _cone_record_windows(regbg, bg, cone, settings):
    win0 = auto_cone_window(regbg, bg, cone, "0", settings.cone_fit_budget)
    win1 = auto_cone_window(regbg, bg, cone, "inf", settings.cone_fit_budget)
    if win0 is None:
        win0 = (bg.grid.s_min + 2.0, bg.grid.s_min + 7.0)
    if win1 is None:
        win1 = (bg.grid.s_max - 7.0, bg.grid.s_max - 2.0)
    return win0, win1


def compute_record(
    trajectory: list[FlowState],
    regbg: RegularizedBackground,
    bg: BackgroundGeometry,
    cone: ConeData,
    vf: VectorFieldData,
    settings: DiagnosticsSettings = DEFAULT_SETTINGS,
) -> DiagnosticsRecord:
    """Full diagnostic battery at the last snapshot of the trajectory.

    The weak residual is cumulative: it tests the trajectory recorded so far
    (0 for a single snapshot, where no time integral exists yet).
    """
    state = trajectory[-1]
    margin_window = interior_window(bg.grid, settings.window_margin)
    curvature_window = resolvable_window(
        regbg, bg, settings.window_margin, settings.curvature_density_floor
    )
    sup_phi, sup_phidot = sup_bounds(state)
    tr_eps_phi, tr_phi_eps = trace_ratios(state, regbg, bg)
    win0, win1 = _cone_record_windows(regbg, bg, cone, settings)
    if len(trajectory) >= 2:
        weak = weak_residual(
            trajectory, default_battery(state.t), regbg, bg, cone, vf
        )
    else:
        weak = 0.0
    return DiagnosticsRecord(
        t=state.t,
        sup_phi=sup_phi,
        sup_phidot=sup_phidot,
        trace_eps_phi=tr_eps_phi,
        trace_phi_eps=tr_phi_eps,
        calabi_s=calabi_S(state, bg, regbg, curvature_window),
        rm_max=curvature_max(state, bg, regbg, curvature_window),
        sup_x_phi=x_phi_sup(state, vf, regbg, bg),
        cone_exp0=cone_exponent_fit(state, regbg, bg, win0),
        cone_exp_inf=cone_exponent_fit(state, regbg, bg, win1),
        soliton_residual=soliton_residual(state, regbg, bg, cone, vf, margin_window),
        weak_residual=weak,
        holder_seminorm=holder_seminorm(state.phi, settings.holder_alpha, bg),
    )
