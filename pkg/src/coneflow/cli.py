"""Operator surface: run / continuation / diagnose / fixtures.

Outputs are plain CSV (comma separated, header row, LF endings) and JSON
lines (one record per line, UTF-8); every float is printed with 17
significant digits so that reruns and the diagnose subcommand can compare
byte-for-byte.  The run manifest records the canonical config hash, tool
version, timestamps, and the produced files with their roles.
"""
from __future__ import annotations

import argparse
import datetime
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    AppConfig,
    canonical_text,
    config_hash,
    parse_config,
)
from .continuation import ContinuationReport, run_sequence
from .diagnostics import CSV_HEADER, compute_record
from .errors import ConeflowError, ConfigError
from .flow import FlowState, rhs_eval, run
from .fixtures import generate_fixtures, render_fixtures


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _dumps(obj, indent: int = 0) -> str:
    """Minimal JSON emitter with 17-significant-digit floats."""
    pad, pad_in = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = ",\n".join(
            f'{pad_in}"{k}": {_dumps(v, indent + 1)}' for k, v in obj.items()
        )
        return "{\n" + items + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + ", ".join(_dumps(v, indent) for v in obj) + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt(float(obj))
    if isinstance(obj, str):
        return '"' + obj.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if obj is None:
        return "null"
    raise TypeError(f"cannot serialize {type(obj)}")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _out_dir(args) -> Path:
    # CONEFLOW_OUT overrides --out (the operator contract), then the flag,
    # then the local default.
    env = os.environ.get("CONEFLOW_OUT")
    if env:
        return Path(env)
    if args.out:
        return Path(args.out)
    return Path("coneflow-out")


def _profile_csv(trajectory: list[FlowState], attr: str, prefix: str) -> str:
    n = trajectory[0].phi.size
    header = "t," + ",".join(f"{prefix}_{i}" for i in range(n))
    rows = [
        _fmt(st.t) + "," + ",".join(_fmt(v) for v in getattr(st, attr))
        for st in trajectory
    ]
    return header + "\n" + "\n".join(rows) + "\n"


def _trajectory_csv(trajectory: list[FlowState]) -> str:
    return _profile_csv(trajectory, "phi", "phi")


def _grid_csv(grid) -> str:
    return "s\n" + "\n".join(_fmt(v) for v in grid.s) + "\n"


def _record_dict(record) -> dict:
    from .diagnostics import JSON_FIELDS

    return {name: float(getattr(record, attr)) for name, attr in JSON_FIELDS}


def _write_run_artifacts(out: Path, app: AppConfig, trajectory, records) -> list[dict]:
    outputs = []

    def emit(name: str, text: str, role: str) -> None:
        _write(out / name, text)
        outputs.append({"path": name, "role": role})

    emit("config.canonical", canonical_text(app), "canonicalized configuration")
    emit("grid.csv", _grid_csv(app.flow.grid), "radial grid nodes")
    emit("trajectory.csv", _trajectory_csv(trajectory), "potential snapshots")
    emit(
        "curvature.csv",
        _profile_csv(trajectory, "phipp", "phipp"),
        "maintained second-derivative snapshots (for bit-stable re-diagnosis)",
    )
    emit(
        "diagnostics.jsonl",
        "\n".join(r.to_json_line() for r in records) + "\n",
        "diagnostics records (JSON lines)",
    )
    emit(
        "diagnostics.csv",
        CSV_HEADER + "\n" + "\n".join(r.to_csv_row() for r in records) + "\n",
        "diagnostics records (CSV)",
    )
    return outputs


def _write_manifest(out: Path, app: AppConfig, started: str, outputs, extra=None) -> None:
    manifest = {
        "configHash": config_hash(app),
        "toolVersion": __version__,
        "startedAt": started,
        "finishedAt": _now(),
        "outputs": outputs,
    }
    if extra:
        manifest.update(extra)
    _write(out / "manifest.json", _dumps(manifest) + "\n")


def cmd_run(args) -> int:
    app = parse_config(args.config)
    out = _out_dir(args)
    started = _now()
    trajectory, records = run(app.flow, settings=app.diagnostics)
    outputs = _write_run_artifacts(out, app, trajectory, records)
    _write_manifest(out, app, started, outputs, {"seedless": bool(args.seedless)})
    print(f"run complete: {len(trajectory)} snapshots -> {out}")
    return 0


def _report_dict(app: AppConfig, report: ContinuationReport) -> dict:
    return {
        "configHash": config_hash(app),
        "epsList": list(report.eps_list),
        "window": list(report.window),
        "timeSamples": list(report.time_samples),
        "cauchyGaps": list(report.cauchy_gaps),
        "cauchyOk": report.cauchy_ok,
        "cauchyThreshold": report.cauchy_threshold,
        "supPhiWindow": report.sup_phi_window,
        "pairwiseC0": [list(row) for row in report.pairwise_c0],
        "uniformity": {
            "maxSupPhi": report.uniformity.max_sup_phi,
            "maxSupPhidot": report.uniformity.max_sup_phidot,
            "maxTraceEpsPhi": report.uniformity.max_trace_eps_phi,
            "maxTracePhiEps": report.uniformity.max_trace_phi_eps,
            "maxHolderSeminorm": report.uniformity.max_holder_seminorm,
            "traceCertificateA": report.uniformity.trace_certificate_a,
        },
        "coneFitTrend": list(report.cone_fit_trend),
        "perEps": [
            {
                "epsilon": s.epsilon,
                "runtimeS": s.runtime_s,
                "finalRecord": _record_dict(s.final_record),
            }
            for s in report.per_eps
        ],
        "limitProfile": list(report.limit_profile),
    }


def cmd_continuation(args) -> int:
    app = parse_config(args.config)
    cont = app.continuation
    overrides = {}
    if args.eps_list:
        overrides["eps_list"] = tuple(float(t) for t in args.eps_list.split(","))
    if args.window:
        lo, hi = args.window.split(":")
        overrides["window"] = (float(lo), float(hi))
    if args.threads:
        overrides["threads"] = int(args.threads)
    if overrides:
        cont = replace(cont, **overrides)
        app = replace(app, continuation=cont)
    out = _out_dir(args)
    started = _now()
    report = run_sequence(
        app.flow,
        cont.eps_list,
        window=cont.window,
        time_samples=cont.time_samples,
        threads=cont.threads,
        cauchy_threshold=cont.cauchy_threshold,
        keep_trajectories=True,
        settings=app.diagnostics,
    )
    outputs = []
    _write(out / "report.json", _dumps(_report_dict(app, report)) + "\n")
    outputs.append({"path": "report.json", "role": "continuation report"})
    for i, summary in enumerate(report.per_eps):
        tag = f"runs/run_{i:02d}_eps_{summary.epsilon:.10g}"
        _write(out / tag / "trajectory.csv", _trajectory_csv(list(summary.trajectory)))
        _write(
            out / tag / "curvature.csv",
            _profile_csv(list(summary.trajectory), "phipp", "phipp"),
        )
        _write(
            out / tag / "diagnostics.csv",
            CSV_HEADER + "\n" + "\n".join(r.to_csv_row() for r in summary.records) + "\n",
        )
        _write(
            out / tag / "diagnostics.jsonl",
            "\n".join(r.to_json_line() for r in summary.records) + "\n",
        )
        outputs.append({"path": tag, "role": "per-epsilon run artifacts"})
    _write_manifest(out, app, started, outputs, {"cauchyOk": report.cauchy_ok})
    print(
        f"continuation complete: {len(report.eps_list)} runs, "
        f"cauchy_ok={report.cauchy_ok} -> {out}"
    )
    return 0


def _read_profile_rows(path: Path) -> list[tuple[float, np.ndarray]]:
    if not path.exists():
        raise ConfigError(f"run directory is missing {path.name}")
    lines = path.read_text(encoding="utf-8").strip().split("\n")
    rows = []
    for row in lines[1:]:
        values = np.array([float(tok) for tok in row.split(",")])
        rows.append((float(values[0]), values[1:]))
    return rows


def cmd_diagnose(args) -> int:
    run_dir = Path(args.run_dir)
    app = parse_config(run_dir / "config.canonical")
    phi_rows = _read_profile_rows(run_dir / "trajectory.csv")
    phipp_rows = _read_profile_rows(run_dir / "curvature.csv")
    if len(phi_rows) != len(phipp_rows):
        raise ConfigError(
            "trajectory.csv and curvature.csv disagree on the snapshot count"
        )
    bg, regbg = app.flow.build_backgrounds()
    trajectory: list[FlowState] = []
    records = []
    for (t, phi), (_, phipp) in zip(phi_rows, phipp_rows):
        state = FlowState(
            phi=phi,
            phipp=phipp,
            phidot=rhs_eval(phi, regbg, bg, app.flow.cone, app.flow.vf, phipp=phipp),
            t=t,
        )
        trajectory.append(state)
        records.append(
            compute_record(
                trajectory, regbg, bg, app.flow.cone, app.flow.vf, app.diagnostics
            )
        )
    recomputed = "\n".join(r.to_json_line() for r in records) + "\n"
    stored = (run_dir / "diagnostics.jsonl").read_text(encoding="utf-8")
    if args.out:
        _write(Path(args.out) / "diagnostics.jsonl", recomputed)
    if recomputed != stored:
        for i, (a, b) in enumerate(zip(recomputed.splitlines(), stored.splitlines())):
            if a != b:
                print(
                    f"diagnose: record {i} differs\n  recomputed: {a}\n  stored:     {b}",
                    file=sys.stderr,
                )
                break
        print("diagnose: NOT bit-stable", file=sys.stderr)
        return 1
    print(f"diagnose: {len(records)} records, bit-stable")
    return 0


def cmd_fixtures(args) -> int:
    out = _out_dir(args)
    text = render_fixtures(generate_fixtures())
    _write(out / "fixtures.txt", text)
    print(f"fixtures written: {out / 'fixtures.txt'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coneflow",
        description="regularized conical Kahler-Ricci flow laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="configuration file")
        p.add_argument("--out", help="output directory (or env CONEFLOW_OUT)")
        p.add_argument(
            "--seedless",
            action="store_true",
            help="assert the no-randomness contract (recorded in the manifest; "
            "the package never draws random numbers)",
        )

    p_run = sub.add_parser("run", help="single flow run with diagnostics")
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_cont = sub.add_parser("continuation", help="decreasing-epsilon sweep")
    common(p_cont)
    p_cont.add_argument("--window", help="override Cauchy window LO:HI")
    p_cont.add_argument("--eps-list", help="override epsilon list (CSV)")
    p_cont.add_argument("--threads", type=int, help="worker pool size")
    p_cont.set_defaults(func=cmd_continuation)

    p_diag = sub.add_parser(
        "diagnose", help="recompute diagnostics for a stored trajectory"
    )
    p_diag.add_argument("--run-dir", required=True, help="directory of a prior run")
    p_diag.add_argument("--out", help="optional output directory for the recomputation")
    p_diag.set_defaults(func=cmd_diagnose)

    p_fix = sub.add_parser("fixtures", help="regenerate the oracle fixtures file")
    common(p_fix, needs_config=False)
    p_fix.set_defaults(func=cmd_fixtures)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConeflowError as exc:
        print(f"coneflow: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
