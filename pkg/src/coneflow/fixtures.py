"""Frozen oracle values.

Each entry is computed by an independent route (finite differences of
quadrature values, closed forms, brute-force scans, small cross-scheme runs)
and written to a diffable text file together with its matching tolerance and
provenance.  The committed copy lives under tests/fixtures/; the test suite
recomputes every entry and fails on drift beyond the stated tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .diagnostics import (
    calabi_profile,
    curvature_profile,
    holder_seminorm,
    reference_distance,
    soliton_residual,
)
from .flow import FlowConfig, initial_state, rhs_eval, run, stationary_solve
from .geometry import (
    ConeData,
    RadialGrid,
    VectorFieldData,
    build_background,
    check_X_logsD_bound,
    theta_potential,
)
from .regularization import (
    build_psi_aux,
    build_regularized_background,
    chi_derivatives,
    chi_eval,
    select_k,
)

ORACLE_GRID = RadialGrid(-30.0, 30.0, 2049)
SYM_CONE = ConeData(lam=1.0, beta=0.5, tau0=1.0, tau_inf=1.0)
SMALL_GRID = RadialGrid(-8.0, 8.0, 257)
TINY_GRID = RadialGrid(-5.0, 5.0, 161)


@dataclass(frozen=True)
class FixtureEntry:
    name: str
    value: float
    tol: float
    comment: str


def _fd_second(values: np.ndarray, i: int, h: float) -> float:
    return (values[i + 1] - 2.0 * values[i] + values[i - 1]) / (h * h)


def _fd_second_richardson(f, x: float, h: float) -> float:
    """Centered second difference extrapolated over h and h/2 (O(h^4))."""
    d_h = (f(x + h) - 2.0 * f(x) + f(x - h)) / h ** 2
    d_h2 = (f(x + h / 2) - 2.0 * f(x) + f(x - h / 2)) / (h / 2) ** 2
    return (4.0 * d_h2 - d_h) / 3.0


def _fd_first_5pt(f, x: float, h: float) -> float:
    return (f(x - 2 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2 * h)) / (12.0 * h)


def _fd_first_richardson(f, x: float, h: float) -> float:
    """Five-point stencil extrapolated over h and h/2 (O(h^6))."""
    return (16.0 * _fd_first_5pt(f, x, h / 2) - _fd_first_5pt(f, x, h)) / 15.0


def _geometry_entries() -> list[FixtureEntry]:
    grid = ORACLE_GRID
    bg = build_background(SYM_CONE, VectorFieldData(c=1.0), grid)
    s, h = grid.s, grid.spacing
    entries = []

    span_defect = abs(2.0 - (bg.u0p[-1] - bg.u0p[0]))
    entries.append(FixtureEntry(
        "momentum_span_defect", span_defect, 1e-15,
        "analytic limits of the momentum map 2e^s/(1+e^s); "
        "defect 2(e^{s_min}+e^{-s_max}) at the default truncation",
    ))

    log_upp = np.log(bg.u0pp)
    interior = slice(1, grid.n - 1)
    fd = (log_upp[2:] - 2.0 * log_upp[1:-1] + log_upp[:-2]) / (h * h)
    ricci_defect = float(np.max(np.abs(-fd - bg.u0pp[interior])))
    entries.append(FixtureEntry(
        "ricci_identity_fd_sup", ricci_defect, 1e-9,
        "sup of |-(log u0'')'' - u0''| by centered differences; the reference "
        "metric satisfies Ric = omega, so this is pure stencil error O(h^2)",
    ))

    entries.append(FixtureEntry(
        "f0_sup", float(np.max(np.abs(bg.f0))), 1e-15,
        "Ricci potential of the reference metric, computed through the "
        "decay- and area-normalized defining identity; vanishes for this "
        "Einstein background",
    ))

    combo = SYM_CONE.tau0 * bg.h0 + SYM_CONE.tau_inf * bg.h_inf
    mid = int(np.argmin(np.abs(s)))
    entries.append(FixtureEntry(
        "divisor_curvature_fd_at0", _fd_second(combo, mid, h), 1e-9,
        "centered second difference of tau0*h0 + tauInf*hInf at s=0; equals "
        "-lambda*u0''(0) = -1/2 (curvature of the divisor metric is "
        "lambda*omega0, forced by the degree constraint)",
    ))

    theta = theta_potential(VectorFieldData(c=1.0), bg)
    kappa = float(theta[mid] - 1.0 * bg.u0p[mid])
    entries.append(FixtureEntry(
        "theta_kappa_c1", kappa, 1e-10,
        "normalizing constant of the Hamiltonian for c=1 by grid quadrature; "
        "closed form log(2c/(e^{2c}-1))",
    ))

    entries.append(FixtureEntry(
        "x_logsd_sup_sym_c1", check_X_logsD_bound(
            VectorFieldData(c=1.0), SYM_CONE, bg
        ), 1e-12,
        "sup |X log|s_D|^2| for the symmetric divisor, c=1; the profile is "
        "-tanh(s/2) scaled by tau, so the grid scan peaks at the truncation "
        "nodes with value tanh(|s_min|/2)",
    ))

    dcombo = _fd_first_5pt(
        lambda x: float(np.interp(x, s, combo)), 0.0, 4.0 * h
    )
    entries.append(FixtureEntry(
        "x_logsd_fd_at0_sym_c1", dcombo, 1e-6,
        "five-point difference of tau0*h0 + tauInf*hInf at s=0; vanishes for "
        "the symmetric divisor",
    ))
    return entries


def _regularization_entries() -> list[FixtureEntry]:
    entries = []
    entries.append(FixtureEntry(
        "chi_eps0_rho_half_u1", chi_eval(0.0, 0.5, 1.0), 1e-12,
        "closed form of the smoothing integral at eps=0: u^rho/rho^2 = 4",
    ))
    entries.append(FixtureEntry(
        "chi_quarter_rho_half_u1", chi_eval(0.25, 0.5, 1.0), 1e-9,
        "adaptive quadrature of the smoothing integral at eps=1/4, rho=1/2, "
        "u=1 (cross-checked against high-precision quadrature in the tests)",
    ))

    eps, rho, u = 0.1, 0.6, 0.5
    _, second = chi_derivatives(eps, rho, u)
    fd = _fd_second_richardson(lambda x: chi_eval(eps, rho, x, 1e-12), u, 0.02)
    entries.append(FixtureEntry(
        "chi_second_fd_gap", abs(second - fd), 1e-7,
        "closed-form second derivative against Richardson-extrapolated "
        "centered differences of the quadrature at (0.1, 0.6, 0.5); "
        "must stay below 1e-6",
    ))

    worst = 0.0
    for eps in (0.15, 0.4):
        for rho in (0.35, 0.7, 1.0):
            for u in (0.3, 0.8):
                first, _ = chi_derivatives(eps, rho, u)
                fd = _fd_first_richardson(
                    lambda x: chi_eval(eps, rho, x, 1e-12), u, 0.02
                )
                worst = max(worst, abs(first - fd))
    entries.append(FixtureEntry(
        "chi_first_fd_gap_lattice", worst, 1e-9,
        "worst gap between the closed-form first derivative and five-point "
        "differences of the quadrature over a 12-point (eps, rho, u) lattice; "
        "must stay below 1e-8",
    ))

    bg = build_background(SYM_CONE, VectorFieldData(), ORACLE_GRID)
    k_star = select_k(SYM_CONE, bg, 0.5)
    entries.append(FixtureEntry(
        "select_k_sym_nu_half", k_star, 5e-4,
        "bisection for the largest k with nu >= 1/2 across the default sweep "
        "(the density ratio is affine in k, so the bracket is clean)",
    ))

    psi = build_psi_aux(2.0 ** -6, 0.5, 1.0, SYM_CONE, bg)
    entries.append(FixtureEntry(
        "psi_sup_eps_2m6", psi.sup, 1e-9,
        "sup of the auxiliary barrier at eps=2^-6, rho=1/2, Ctilde=1",
    ))
    entries.append(FixtureEntry(
        "psi_max_coeff_eps_2m6", psi.max_coeff, 1e-6,
        "critical barrier coefficient (largest c' with u0'' + c'*psi'' >= 0); "
        "positive, certifying the small-coefficient positivity claim",
    ))
    return entries


def _conical_config(grid: RadialGrid, eps: float, k: float = 0.3) -> FlowConfig:
    return FlowConfig(
        cone=SYM_CONE,
        vf=VectorFieldData(c=0.3),
        epsilon=eps,
        k=k,
        grid=grid,
        t_end=1.0,
    )


def _oracle_rhs_gap() -> float:
    """Initial flow velocity against a term-by-term quadrature assembly."""
    config = _conical_config(SMALL_GRID, eps=2.0 ** -4)
    bg, regbg = config.build_backgrounds()
    state = initial_state(config, regbg, bg)

    w0, w_inf = np.exp(bg.h0), np.exp(bg.h_inf)
    eps, k, cone = config.epsilon, config.k, config.cone
    chi_quad = np.array([chi_eval(eps, cone.rho0, float(u), 1e-12) for u in w0])
    chi_quad += np.array(
        [chi_eval(eps, cone.rho_inf, float(u), 1e-12) for u in w_inf]
    )
    first0, second0 = chi_derivatives(eps, cone.rho0, w0)
    first1, second1 = chi_derivatives(eps, cone.rho_inf, w_inf)
    chip = first0 * w0 * bg.h0p + first1 * w_inf * bg.h_infp
    chipp = (
        second0 * (w0 * bg.h0p) ** 2 + first0 * w0 * (bg.h0pp + bg.h0p ** 2)
        + second1 * (w_inf * bg.h_infp) ** 2
        + first1 * w_inf * (bg.h_infpp + bg.h_infp ** 2)
    )
    f_eps = (
        bg.f0
        + np.log((bg.u0pp + k * chipp) / bg.u0pp)
        + (1.0 - cone.beta) * (
            cone.tau0 * np.log(eps ** 2 + w0)
            + cone.tau_inf * np.log(eps ** 2 + w_inf)
        )
    )
    oracle = (
        f_eps
        + cone.gamma * (k * chi_quad + config.c_eps0)
        + bg.theta_x
        + config.vf.c * k * chip
    )
    return float(np.max(np.abs(state.phidot - oracle)))


def _flow_entries() -> list[FixtureEntry]:
    entries = []
    entries.append(FixtureEntry(
        "rhs_phi0_oracle_gap", _oracle_rhs_gap(), 1e-9,
        "initial velocity F_eps + gamma*(k*chi + c0) + theta_X + X(k*chi) "
        "reassembled with per-node adaptive quadrature for chi",
    ))

    ke = FlowConfig(
        cone=ConeData(1.0, 1.0, 1.0, 1.0),
        vf=VectorFieldData(0.0),
        epsilon=0.25,
        k=0.0,
        grid=SMALL_GRID,
        t_end=0.3,
    )
    trajectory, _ = run(ke, with_diagnostics=False)
    sup_phi = max(float(np.max(np.abs(st.phi))) for st in trajectory)
    entries.append(FixtureEntry(
        "ke_smallrun_sup_phi", sup_phi, 1e-12,
        "Einstein fixed point: the flow from phi=0 stays at machine zero",
    ))
    bg, regbg = ke.build_backgrounds()
    entries.append(FixtureEntry(
        "ke_smallrun_soliton_residual",
        soliton_residual(trajectory[-1], regbg, bg, ke.cone, ke.vf, (-5.0, 5.0)),
        1e-12,
        "stationarity defect (second s-derivative of the velocity) at the "
        "Einstein fixed point",
    ))

    impl = _conical_config(TINY_GRID, eps=2.0 ** -3)
    impl = replace(impl, t_end=0.05, dt_init=2e-4, dt_max=2e-4,
                   output_cadence=0.05)
    expl = replace(impl, scheme="explicit-adaptive", dt_init=1e-5, dt_max=5e-4,
                   rk_tol=1e-9)
    phi_i = run(impl, with_diagnostics=False)[0][-1].phi
    phi_e = run(expl, with_diagnostics=False)[0][-1].phi
    entries.append(FixtureEntry(
        "scheme_cross_gap_tiny", float(np.max(np.abs(phi_i - phi_e))), 1e-6,
        "implicit Euler against the embedded explicit pair on a short run; "
        "gap is the O(dt) implicit truncation error",
    ))

    stat_cfg = replace(
        _conical_config(RadialGrid(-8.0, 8.0, 129), eps=2.0 ** -3), t_end=8.0
    )
    phi_star = stationary_solve(stat_cfg, tol=1e-9)
    bg_s, regbg_s = stat_cfg.build_backgrounds()
    res = float(np.max(np.abs(
        rhs_eval(phi_star, regbg_s, bg_s, stat_cfg.cone, stat_cfg.vf)
    )))
    entries.append(FixtureEntry(
        "stationary_residual_small", res, 1e-9,
        "sup |RHS| of the polished stationary profile; below the Newton "
        "target 1e-9 by construction",
    ))

    fine_grid = RadialGrid(-8.0, 8.0, 257)
    fine_cfg = replace(stat_cfg, grid=fine_grid)
    bg_f, regbg_f = fine_cfg.build_backgrounds()
    from scipy.interpolate import CubicSpline

    phi_fine = CubicSpline(stat_cfg.grid.s, phi_star)(fine_grid.s)
    res_fine = float(np.max(np.abs(
        rhs_eval(phi_fine, regbg_f, bg_f, fine_cfg.cone, fine_cfg.vf)
    )[2:-2]))
    entries.append(FixtureEntry(
        "stationary_refined_rhs", res_fine, 1e-4,
        "stationary profile re-evaluated on a doubled grid: residual at "
        "interpolation/discretization order, confirming grid consistency",
    ))
    return entries


def _diagnostics_entries() -> list[FixtureEntry]:
    entries = []
    grid = ORACLE_GRID
    bg = build_background(SYM_CONE, VectorFieldData(), grid)
    s = grid.s

    density = bg.u0pp * (1.0 + 0.2 * np.exp(-(s ** 2) / 8.0))
    base = calabi_profile(density, bg)
    mask = base > 1e-8
    ratio = calabi_profile(2.0 * density, bg)[mask] / base[mask]
    entries.append(FixtureEntry(
        "calabi_scaling_ratio", float(np.max(ratio)), 1e-12,
        "doubling the metric halves the Calabi quantity (three inverse "
        "metrics against two derivatives in the 1-d reduction)",
    ))

    rm = curvature_profile(bg.u0pp, grid)
    mask = np.abs(s) <= 16.0  # density-resolvable part of the grid
    entries.append(FixtureEntry(
        "rm_fs_interior_max_defect",
        float(np.max(np.abs(rm[mask] - 1.0))), 1e-9,
        "reference-metric curvature magnitude is the constant 1 "
        "(Einstein normalization); defect is stencil error on the "
        "density-resolvable window",
    ))

    synth = np.exp(0.5 * s)
    slope = float(np.polyfit(s[mask], np.log(synth[mask]), 1)[0])
    entries.append(FixtureEntry(
        "cone_fit_synthetic_halfslope", slope, 1e-12,
        "least-squares slope of exact log-linear data",
    ))

    deep = (s >= grid.s_min + 2.0) & (s <= grid.s_min + 7.0)
    slope_smooth = float(np.polyfit(s[deep], np.log(bg.u0pp[deep]), 1)[0])
    entries.append(FixtureEntry(
        "cone_fit_smooth_deep_slope", slope_smooth, 1e-9,
        "deep-window slope of the smooth reference density; approaches 1 "
        "(the smooth-metric cone exponent)",
    ))

    s0 = 0.0
    d = reference_distance(np.full_like(s, s0), s, grid)
    phi = d ** 0.75
    entries.append(FixtureEntry(
        "holder_synthetic_unit", holder_seminorm(phi, 0.75, bg), 1e-6,
        "profile d0(., s0)^alpha has seminorm 1 by construction; deviation "
        "is pair-schedule resolution",
    ))

    a = np.array([-3.0, -1.0, 0.5])
    b = np.array([2.0, 4.0, 9.0])
    closed = np.abs(2.0 * np.arctan(np.exp(b / 2.0)) - 2.0 * np.arctan(np.exp(a / 2.0)))
    gap = float(np.max(np.abs(reference_distance(a, b, grid) - closed)))
    entries.append(FixtureEntry(
        "reference_distance_closed_gap", gap, 1e-9,
        "tabulated arc length against the closed form 2*atan(e^{s/2})",
    ))
    return entries


def generate_fixtures() -> list[FixtureEntry]:
    entries = []
    entries.extend(_geometry_entries())
    entries.extend(_regularization_entries())
    entries.extend(_flow_entries())
    entries.extend(_diagnostics_entries())
    return entries


def render_fixtures(entries) -> str:
    lines = [
        "# coneflow oracle fixtures",
        "# Regenerate with: coneflow fixtures --out <dir>",
        "# Format: one '# provenance' block, then 'name = value tol'.",
        "",
    ]
    for e in entries:
        lines.append(f"# {e.comment}")
        lines.append(f"{e.name} = {e.value:.17g} {e.tol:.17g}")
        lines.append("")
    return "\n".join(lines)


def parse_fixtures(text: str) -> dict[str, tuple[float, float]]:
    out = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        name, _, rest = line.partition("=")
        value, tol = rest.split()
        out[name.strip()] = (float(value), float(tol))
    return out
