"""Shared fixtures: the default experiment suite, computed once per session."""
from __future__ import annotations

import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from coneflow import run, run_sequence
from coneflow.config import parse_config
from coneflow.continuation import ContinuationReport

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"
FIXTURES_FILE = Path(__file__).resolve().parent / "fixtures" / "oracles.txt"


@pytest.fixture(scope="session")
def ke_app():
    return parse_config(CONFIG_DIR / "kahler-einstein.cfg")


@pytest.fixture(scope="session")
def strong_app():
    return parse_config(CONFIG_DIR / "cone-strong.cfg")


@pytest.fixture(scope="session")
def mild_app():
    return parse_config(CONFIG_DIR / "cone-mild.cfg")


@pytest.fixture(scope="session")
def ke_run(ke_app):
    """Einstein fixed-point run with diagnostics, plus its wall time."""
    tic = time.perf_counter()
    trajectory, records = run(ke_app.flow, settings=ke_app.diagnostics)
    elapsed = time.perf_counter() - tic
    return trajectory, records, elapsed


@pytest.fixture(scope="session")
def strong_sweep(strong_app):
    """Strong-cone trajectories for the default sweep (no per-snapshot records).

    Returns dict eps -> (config, trajectory); backgrounds are cheap to
    rebuild from the configs where needed.
    """
    out = {}
    for eps in strong_app.continuation.eps_list:
        cfg = replace(strong_app.flow, epsilon=eps)
        trajectory, _ = run(cfg, with_diagnostics=False)
        out[eps] = (cfg, trajectory)
    return out


@pytest.fixture(scope="session")
def strong_finest(strong_app):
    """Strong-cone run at the finest default-sweep epsilon (2^-10)."""
    cfg = strong_app.flow
    trajectory, _ = run(cfg, with_diagnostics=False)
    return cfg, trajectory


@pytest.fixture(scope="session")
def mild_report(mild_app) -> ContinuationReport:
    """Mild-cone continuation sweep with full diagnostics records."""
    cont = mild_app.continuation
    return run_sequence(
        mild_app.flow,
        cont.eps_list,
        window=cont.window,
        time_samples=cont.time_samples,
        cauchy_threshold=cont.cauchy_threshold,
        keep_trajectories=True,
        settings=mild_app.diagnostics,
    )


@pytest.fixture(scope="session")
def oracle_entries():
    from coneflow.fixtures import generate_fixtures

    return generate_fixtures()


def sweep_max_principle_margin(records_or_states, gamma: float) -> float:
    """max over snapshots of sup|phidot(t)| / (sup|phidot(0)| e^{gamma t})."""
    first = records_or_states[0]
    if hasattr(first, "sup_phidot"):
        base = first.sup_phidot
        pairs = [(r.t, r.sup_phidot) for r in records_or_states]
    else:
        base = float(np.max(np.abs(first.phidot)))
        pairs = [
            (st.t, float(np.max(np.abs(st.phidot)))) for st in records_or_states
        ]
    return max(v / (base * np.exp(gamma * t)) for t, v in pairs)
