"""The eps -> 0 program: sweeps, Cauchy certificates, limit extraction.

One flow run per epsilon in a strictly decreasing list; the runs share all
other configuration and are independent (a bounded worker pool may execute
them concurrently).  Instead of passing to an unconstructive subsequence the
full geometric sweep is kept and monotonicity of the consecutive window
distances is reported; Cauchy success additionally requires the final gap to
drop below a threshold relative to the size of the finest potential.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .diagnostics import (
    DEFAULT_SETTINGS,
    DiagnosticsRecord,
    DiagnosticsSettings,
    holder_seminorm,
)
from .errors import ConeflowError, ParameterError
from .flow import FlowConfig, FlowState, run, snapshot_times
from .gridops import window_mask


class ContinuationError(ConeflowError):
    """A sweep member failed or an extraction precondition is unmet."""

    def __init__(self, message: str, epsilon: float | None = None, partial=None):
        loc = f" (at epsilon={epsilon:g})" if epsilon is not None else ""
        super().__init__(message + loc)
        self.epsilon = epsilon
        self.partial = partial


@dataclass(frozen=True)
class RunSummary:
    """Per-epsilon run artifacts kept in the report."""

    epsilon: float
    runtime_s: float
    final_record: DiagnosticsRecord
    records: tuple[DiagnosticsRecord, ...]
    trajectory: tuple[FlowState, ...] | None = None  # kept only on request


@dataclass(frozen=True)
class UniformityRecord:
    """Sweep-wide maxima certifying the uniform estimates empirically."""

    max_sup_phi: float
    max_sup_phidot: float
    max_trace_eps_phi: float
    max_trace_phi_eps: float
    max_holder_seminorm: float
    trace_certificate_a: float  # single A with A^-1 <= density ratio <= A


@dataclass(frozen=True)
class ContinuationReport:
    base_config: FlowConfig
    eps_list: tuple[float, ...]
    window: tuple[float, float]
    time_samples: tuple[float, ...]
    per_eps: tuple[RunSummary, ...]
    pairwise_c0: np.ndarray
    cauchy_gaps: tuple[float, ...]
    cauchy_ok: bool
    cauchy_threshold: float
    sup_phi_window: float
    uniformity: UniformityRecord
    limit_profile: np.ndarray
    cone_fit_trend: tuple[float, ...]

    def __post_init__(self) -> None:
        self.pairwise_c0.setflags(write=False)
        self.limit_profile.setflags(write=False)


def _window_samples(
    trajectory: tuple[FlowState, ...], time_samples, mask
) -> np.ndarray:
    by_t = {round(st.t, 12): st for st in trajectory}
    rows = []
    for t in time_samples:
        key = round(float(t), 12)
        if key not in by_t:
            raise ParameterError(
                f"time sample {t} is not a snapshot time; "
                "align output_cadence with the sample set"
            )
        rows.append(by_t[key].phi[mask])
    return np.stack(rows)


def run_sequence(
    base_config: FlowConfig,
    eps_list,
    window: tuple[float, float] = (-10.0, 10.0),
    time_samples=(0.0, 0.5, 1.0),
    threads: int = 1,
    cauchy_threshold: float = 1e-3,
    keep_trajectories: bool = False,
    settings: DiagnosticsSettings = DEFAULT_SETTINGS,
) -> ContinuationReport:
    """Execute the sweep and assemble the full report."""
    eps_list = tuple(float(e) for e in eps_list)
    if any(e <= 0 for e in eps_list):
        raise ParameterError("epsilon values must be positive")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ParameterError("eps_list must be strictly decreasing")
    grid = base_config.grid
    if not (grid.s_min < window[0] < window[1] < grid.s_max):
        raise ParameterError(f"window {window} not compactly inside the grid")
    time_samples = tuple(float(t) for t in time_samples)
    if any(t < 0 or t > base_config.t_end + 1e-12 for t in time_samples):
        raise ParameterError("time samples outside [0, t_end]")
    snap = set(round(float(t), 12) for t in snapshot_times(base_config))
    for t in time_samples:
        if round(t, 12) not in snap:
            raise ParameterError(
                f"time sample {t} is not hit by output cadence "
                f"{base_config.output_cadence}"
            )

    def one(eps: float):
        tic = time.perf_counter()
        trajectory, records = run(replace(base_config, epsilon=eps), settings=settings)
        return trajectory, records, time.perf_counter() - tic

    results = []
    if threads > 1 and len(eps_list) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(one, eps) for eps in eps_list]
            for eps, fut in zip(eps_list, futures):
                try:
                    results.append(fut.result())
                except ConeflowError as exc:
                    raise ContinuationError(
                        f"sweep member failed: {exc}", epsilon=eps,
                        partial=tuple(results),
                    ) from exc
    else:
        for eps in eps_list:
            try:
                results.append(one(eps))
            except ConeflowError as exc:
                raise ContinuationError(
                    f"sweep member failed: {exc}", epsilon=eps,
                    partial=tuple(results),
                ) from exc

    mask = window_mask(grid, *window)
    samples = [_window_samples(tuple(traj), time_samples, mask) for traj, _, _ in results]
    m = len(eps_list)
    pairwise = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            gap = float(np.max(np.abs(samples[i] - samples[j])))
            pairwise[i, j] = pairwise[j, i] = gap
    gaps = tuple(float(pairwise[i, i + 1]) for i in range(m - 1))
    sup_phi_window = float(np.max(np.abs(samples[-1]))) if m else 0.0

    monotone = all(b < a for a, b in zip(gaps, gaps[1:]))
    small = bool(gaps) and gaps[-1] <= cauchy_threshold * max(sup_phi_window, 1e-300)
    cauchy_ok = (m == 1) or (monotone and small)

    summaries = []
    records_all: list[DiagnosticsRecord] = []
    for eps, (traj, recs, runtime) in zip(eps_list, results):
        summaries.append(
            RunSummary(
                epsilon=eps,
                runtime_s=runtime,
                final_record=recs[-1],
                records=tuple(recs),
                trajectory=tuple(traj) if keep_trajectories else None,
            )
        )
        records_all.extend(recs)

    trace_hi = max(r.trace_eps_phi for r in records_all)
    trace_lo = max(r.trace_phi_eps for r in records_all)
    uniformity = UniformityRecord(
        max_sup_phi=max(r.sup_phi for r in records_all),
        max_sup_phidot=max(r.sup_phidot for r in records_all),
        max_trace_eps_phi=trace_hi,
        max_trace_phi_eps=trace_lo,
        max_holder_seminorm=max(r.holder_seminorm for r in records_all),
        trace_certificate_a=max(trace_hi, trace_lo),
    )
    return ContinuationReport(
        base_config=base_config,
        eps_list=eps_list,
        window=window,
        time_samples=time_samples,
        per_eps=tuple(summaries),
        pairwise_c0=pairwise,
        cauchy_gaps=gaps,
        cauchy_ok=cauchy_ok,
        cauchy_threshold=cauchy_threshold,
        sup_phi_window=sup_phi_window,
        uniformity=uniformity,
        limit_profile=results[-1][0][-1].phi.copy(),
        cone_fit_trend=tuple(r.final_record.cone_exp0 for r in summaries),
    )


@dataclass(frozen=True)
class LimitExtract:
    """Limit profile with its Holder certificate."""

    profile: np.ndarray
    richardson_profile: np.ndarray
    alpha: float
    holder_value: float
    sweep_holder_bound: float
    last_gap: float


def extract_limit(
    report: ContinuationReport, alpha: float | None = None
) -> LimitExtract:
    """Finest-epsilon limit (with an in-eps Richardson variant) plus certificate.

    Refuses to extract unless the sweep declared Cauchy success.  The
    Richardson profile assumes a geometric gap decay with the observed ratio
    (clipped to keep the correction below the last gap).
    """
    if not report.cauchy_ok:
        raise ContinuationError("no Cauchy success declared; refusing extraction")
    if alpha is None:
        alpha = DEFAULT_SETTINGS.holder_alpha
    finest = report.per_eps[-1]
    profile = report.limit_profile
    if len(report.per_eps) >= 2 and report.per_eps[-2].trajectory is not None \
            and finest.trajectory is not None:
        prev = report.per_eps[-2].trajectory[-1].phi
        cur = finest.trajectory[-1].phi
        gaps = report.cauchy_gaps
        ratio = gaps[-1] / gaps[-2] if len(gaps) >= 2 and gaps[-2] > 0 else 0.45
        ratio = min(max(ratio, 0.05), 0.45)
        richardson = cur + (cur - prev) * ratio / (1.0 - ratio)
    else:
        richardson = profile.copy()
    bg, _ = report.base_config.build_backgrounds()
    value = holder_seminorm(profile, alpha, bg)
    return LimitExtract(
        profile=profile.copy(),
        richardson_profile=richardson,
        alpha=alpha,
        holder_value=value,
        sweep_holder_bound=report.uniformity.max_holder_seminorm,
        last_gap=report.cauchy_gaps[-1] if report.cauchy_gaps else 0.0,
    )
