"""Diagnostics: every monitored quantity against its independent oracle."""
import json
from dataclasses import replace

import numpy as np
import pytest

from coneflow import (
    ConeData,
    FlowConfig,
    RadialGrid,
    VectorFieldData,
    build_background,
    run,
    stationary_solve,
)
from coneflow.diagnostics import (
    CSV_HEADER,
    SpaceTimeBump,
    calabi_S,
    calabi_profile,
    compute_record,
    cone_exponent_fit,
    curvature_max,
    curvature_profile,
    default_battery,
    holder_seminorm,
    reference_distance,
    soliton_residual,
    soliton_residual_geometric,
    sup_bounds,
    trace_ratios,
    weak_residual,
    x_phi_sup,
)
from coneflow.errors import ParameterError, WindowError
from coneflow.flow import FlowState, initial_state

SMALL = RadialGrid(-8.0, 8.0, 257)
CONICAL = FlowConfig(
    cone=ConeData(1.0, 0.5, 1.0, 1.0),
    vf=VectorFieldData(0.3),
    epsilon=2.0 ** -3,
    k=0.3,
    grid=SMALL,
    t_end=0.5,
)
KE = FlowConfig(
    cone=ConeData(1.0, 1.0, 1.0, 1.0),
    vf=VectorFieldData(0.0),
    epsilon=0.25,
    k=0.0,
    grid=SMALL,
    t_end=0.5,
)


@pytest.fixture(scope="module")
def conical_run():
    bg, regbg = CONICAL.build_backgrounds()
    trajectory, records = run(CONICAL)
    return bg, regbg, trajectory, records


def _synthetic_state(phipp, grid, t=0.0):
    phi = np.zeros(grid.n)
    return FlowState(phi=phi, phipp=np.asarray(phipp, dtype=float),
                     phidot=np.zeros(grid.n), t=t)


def test_trace_ratios_trivial_and_doubling():
    bg, regbg = CONICAL.build_backgrounds()
    state = initial_state(CONICAL, regbg, bg)
    assert trace_ratios(state, regbg, bg) == (1.0, 1.0)
    doubled = _synthetic_state(regbg.omega_eps_density.copy(), SMALL)
    tr = trace_ratios(doubled, regbg, bg)
    assert tr[0] == pytest.approx(2.0, abs=1e-14)
    # ratios are nodewise reciprocal, so the second trace peaks at 1/2 and
    # the recorded maxima satisfy the product bound with equality
    assert tr[1] == pytest.approx(0.5, abs=1e-14)
    assert tr[0] * tr[1] >= 1.0 - 1e-12


def test_calabi_vanishes_on_background_and_scales():
    bg, regbg = KE.build_backgrounds()
    state = initial_state(KE, regbg, bg)
    assert calabi_S(state, bg, regbg) == 0.0
    density = bg.u0pp * (1.0 + 0.2 * np.exp(-bg.grid.s ** 2 / 8.0))
    base = calabi_profile(density, bg)
    mask = base > 1e-8  # exclude symmetry nodes where the gradient vanishes
    ratio = calabi_profile(2 * density, bg)[mask] / base[mask]
    assert np.max(np.abs(ratio - 0.5)) < 1e-11


def test_curvature_fubini_study_constant_and_flat():
    bg, _ = KE.build_backgrounds()
    rm = curvature_profile(bg.u0pp, SMALL)
    mask = np.abs(SMALL.s) <= 5.0
    assert np.max(np.abs(rm[mask] - 1.0)) < 1e-3  # stencil error at this spacing
    flat = curvature_profile(np.ones(SMALL.n), SMALL)
    assert np.max(flat) < 1e-12


def test_cone_exponent_fit_synthetic_and_errors(conical_run):
    bg, regbg, trajectory, _ = conical_run
    synth = _synthetic_state(np.exp(0.5 * SMALL.s) - regbg.omega_eps_density, SMALL)
    # density = e^{0.5 s} exactly
    fit = cone_exponent_fit(synth, regbg, bg, (-4.0, 4.0))
    assert fit == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(WindowError):
        cone_exponent_fit(trajectory[0], regbg, bg, (-8.0, -7.99))


def test_cone_exponent_smooth_background():
    cfg = replace(KE, grid=RadialGrid(-30.0, 30.0, 2049))
    bg, regbg = cfg.build_backgrounds()
    state = initial_state(cfg, regbg, bg)
    slope = cone_exponent_fit(state, regbg, bg, (-28.0, -23.0))
    assert slope == pytest.approx(1.0, abs=1e-3)


def test_soliton_residual_routes_agree(conical_run):
    bg, regbg, trajectory, _ = conical_run
    state = trajectory[-1]
    win = (-5.0, 5.0)
    direct = soliton_residual(state, regbg, bg, CONICAL.cone, CONICAL.vf, win)
    geometric = soliton_residual_geometric(
        state, regbg, bg, CONICAL.cone, CONICAL.vf, win
    )
    # identical in the continuum; discretely they differ at stencil order
    assert geometric == pytest.approx(direct, rel=0.05)


def test_soliton_residual_stationary():
    coarse = RadialGrid(-8.0, 8.0, 129)
    cfg = replace(CONICAL, grid=coarse, t_end=8.0)
    phi = stationary_solve(cfg, tol=1e-9)
    bg, regbg = cfg.build_backgrounds()
    from coneflow.flow import _ops
    state = FlowState(phi=phi, phipp=_ops(coarse).d2(phi),
                      phidot=np.zeros(coarse.n), t=0.0)
    assert soliton_residual(state, regbg, bg, cfg.cone, cfg.vf, (-5, 5)) < 1e-6


def test_weak_residual_stationary_and_validation(conical_run):
    bg, regbg, trajectory, _ = conical_run
    cfg = replace(CONICAL, t_end=8.0)
    phi = stationary_solve(cfg, tol=1e-8)
    from coneflow.flow import _ops
    s1 = FlowState(phi=phi, phipp=_ops(SMALL).d2(phi), phidot=np.zeros(SMALL.n), t=0.0)
    s2 = replace(s1, t=1.0)
    battery = (SpaceTimeBump(0.0, 3.0, 0.1, 0.9),)
    res = weak_residual([s1, s2], battery, regbg, bg, cfg.cone, cfg.vf)
    assert res < 1e-6
    with pytest.raises(ParameterError):
        weak_residual([s1], battery, regbg, bg, cfg.cone, cfg.vf)
    bad = (SpaceTimeBump(0.0, 20.0, 0.1, 0.9),)
    with pytest.raises(WindowError):
        weak_residual([s1, s2], bad, regbg, bg, cfg.cone, cfg.vf)


def test_weak_residual_forms_differ_by_smoothing_gap(conical_run):
    bg, regbg, trajectory, _ = conical_run
    battery = default_battery(trajectory[-1].t)
    r_eps = weak_residual(trajectory, battery, regbg, bg, CONICAL.cone, CONICAL.vf)
    r_con = weak_residual(
        trajectory, battery, regbg, bg, CONICAL.cone, CONICAL.vf, rhs_form="conical"
    )
    assert r_eps != r_con  # the point-mass form drops the smoothed bump


def test_holder_seminorm():
    bg = build_background(CONICAL.cone, CONICAL.vf, SMALL)
    assert holder_seminorm(np.ones(SMALL.n), 0.5, bg) == 0.0
    d = reference_distance(np.zeros(SMALL.n), SMALL.s, SMALL)
    phi = d ** 0.75
    # the synthetic profile has a kink at s0; spline sampling overshoots
    # by a few tenths of a percent, within the pair-sampling tolerance
    assert holder_seminorm(phi, 0.75, bg) == pytest.approx(1.0, abs=2e-2)
    with pytest.raises(ParameterError):
        holder_seminorm(phi, 1.5, bg)


def test_reference_distance_closed_form():
    a = np.array([-3.0, 0.0, 2.0])
    b = np.array([1.0, 4.0, 7.5])
    closed = np.abs(
        2.0 * np.arctan(np.exp(b / 2.0)) - 2.0 * np.arctan(np.exp(a / 2.0))
    )
    assert np.max(np.abs(reference_distance(a, b, SMALL) - closed)) < 1e-7


def test_sup_bounds_and_x_phi(conical_run):
    bg, regbg, trajectory, _ = conical_run
    state = trajectory[0]
    sup_phi, sup_phidot = sup_bounds(state)
    assert sup_phi == abs(CONICAL.c_eps0)
    assert sup_phidot > 0
    no_field = VectorFieldData(0.0)
    assert x_phi_sup(state, no_field, regbg, bg) == 0.0


def test_record_serialization_and_invariants(conical_run):
    bg, regbg, trajectory, records = conical_run
    record = records[-1]
    line = record.to_json_line()
    parsed = json.loads(line)
    assert list(parsed.keys()) == CSV_HEADER.split(",")
    assert parsed["t"] == record.t
    assert record.trace_eps_phi * record.trace_phi_eps >= 1.0 - 1e-12
    row = record.to_csv_row()
    assert len(row.split(",")) == len(CSV_HEADER.split(","))
    # 17 significant digits round-trip exactly
    assert float(row.split(",")[1]) == record.sup_phi


def test_records_pure_recompute(conical_run):
    bg, regbg, trajectory, records = conical_run
    again = [
        compute_record(trajectory[: i + 1], regbg, bg, CONICAL.cone, CONICAL.vf)
        for i in range(len(trajectory))
    ]
    for a, b in zip(records, again):
        assert a == b


def test_cone_fit_trend_converges_to_exponent():
    """Fitted exponents approach rho0 monotonically as eps decreases."""
    from dataclasses import replace as _replace

    from coneflow.diagnostics import auto_cone_window
    from coneflow.flow import initial_state

    cone = ConeData(1.0, 0.5, 1.0, 1.0)
    base = FlowConfig(
        cone=cone, vf=VectorFieldData(0.3), epsilon=0.5, k=0.5,
        grid=RadialGrid(-30.0, 30.0, 2049), t_end=0.0,
    )
    errors = []
    for j in (7, 8, 9, 10):
        cfg = _replace(base, epsilon=2.0 ** -j)
        bg, regbg = cfg.build_backgrounds()
        window = auto_cone_window(regbg, bg, cone, "0", rel_budget=0.25)
        assert window is not None
        state = initial_state(cfg, regbg, bg)
        errors.append(abs(cone_exponent_fit(state, regbg, bg, window) - cone.rho0))
    assert all(b < a for a, b in zip(errors, errors[1:]))
    assert errors[-1] < 0.05 * cone.rho0
