"""Continuation: sweeps, Cauchy certificates, limit extraction."""
from dataclasses import replace

import numpy as np
import pytest

from coneflow import ConeData, FlowConfig, RadialGrid, VectorFieldData, run_sequence
from coneflow.continuation import ContinuationError, extract_limit
from coneflow.errors import ParameterError

SMALL = RadialGrid(-8.0, 8.0, 257)
BASE = FlowConfig(
    cone=ConeData(1.0, 0.5, 1.0, 1.0),
    vf=VectorFieldData(0.3),
    epsilon=0.125,
    k=0.3,
    grid=SMALL,
    t_end=0.2,
    output_cadence=0.1,
)


def test_single_member_sweep_is_trivial():
    report = run_sequence(BASE, [0.125], window=(-4, 4), time_samples=(0.0, 0.2))
    assert report.cauchy_gaps == ()
    assert report.cauchy_ok
    assert report.pairwise_c0.shape == (1, 1)


def test_smooth_case_eps_independent():
    smooth = replace(BASE, cone=ConeData(1.0, 1.0, 1.0, 1.0), k=0.2)
    report = run_sequence(
        smooth, [0.25, 0.125, 0.0625], window=(-4, 4), time_samples=(0.0, 0.2)
    )
    # rho = 1 collapses chi to the identity: runs are bit-identical across eps
    assert np.max(report.pairwise_c0) == 0.0


def test_validation_errors():
    with pytest.raises(ParameterError, match="decreasing"):
        run_sequence(BASE, [0.125, 0.25], window=(-4, 4), time_samples=(0.0, 0.2))
    with pytest.raises(ParameterError, match="window"):
        run_sequence(BASE, [0.25, 0.125], window=(-40, 4), time_samples=(0.0, 0.2))
    with pytest.raises(ParameterError, match="cadence"):
        run_sequence(BASE, [0.25, 0.125], window=(-4, 4), time_samples=(0.0, 0.17))


def test_sweep_failure_reports_locus():
    bad = replace(BASE, k=1e4)  # smoothing shift destroys positivity
    with pytest.raises(ContinuationError) as err:
        run_sequence(bad, [0.25, 0.125], window=(-4, 4), time_samples=(0.0, 0.2))
    assert err.value.epsilon == 0.25
    assert err.value.partial == ()


def test_determinism_and_threads():
    eps = [0.25, 0.125, 0.0625]
    r1 = run_sequence(BASE, eps, window=(-4, 4), time_samples=(0.0, 0.2))
    r2 = run_sequence(BASE, eps, window=(-4, 4), time_samples=(0.0, 0.2), threads=3)
    assert np.array_equal(r1.pairwise_c0, r2.pairwise_c0)
    assert r1.cauchy_gaps == r2.cauchy_gaps
    assert np.array_equal(r1.limit_profile, r2.limit_profile)


def test_pairwise_symmetry(mild_report):
    m = mild_report.pairwise_c0
    assert np.array_equal(m, m.T)
    assert np.all(np.diag(m) == 0.0)
    assert all(np.isfinite(v) for v in (
        mild_report.uniformity.max_sup_phi,
        mild_report.uniformity.max_sup_phidot,
        mild_report.uniformity.max_trace_eps_phi,
        mild_report.uniformity.max_trace_phi_eps,
        mild_report.uniformity.max_holder_seminorm,
    ))


def test_extract_limit_requires_cauchy():
    report = run_sequence(
        BASE, [0.25, 0.125], window=(-4, 4), time_samples=(0.0, 0.2),
        cauchy_threshold=1e-12,
    )
    assert not report.cauchy_ok
    with pytest.raises(ContinuationError, match="Cauchy"):
        extract_limit(report)


def test_extract_limit_certificate(mild_report):
    extract = extract_limit(mild_report)
    assert np.isfinite(extract.holder_value)
    # the limit's seminorm sits within 10% of the sweep's uniform bound
    assert extract.holder_value <= 1.1 * extract.sweep_holder_bound
    assert extract.holder_value >= 0.5 * extract.sweep_holder_bound
    # Richardson variant moves by less than the final Cauchy gap
    gap = float(np.max(np.abs(extract.richardson_profile - extract.profile)))
    assert gap < extract.last_gap


def test_cone_fit_trend_recorded(mild_report):
    assert len(mild_report.cone_fit_trend) == len(mild_report.eps_list)
    assert all(np.isfinite(v) for v in mild_report.cone_fit_trend)
