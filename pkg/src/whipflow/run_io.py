"""Persistence of runs: config echo, time series, snapshots, summaries.

A run directory holds

    config.json          resolved configuration, schema-versioned
    timeseries.csv       one row per accepted step (plus the initial state)
    snapshot_t<t>.csv    node table (s, positions, tension) per requested time
    summary.json         decay fit, final distances, verdicts, solver stats

CSV floats are written with 17 significant digits and JSON floats with
Python's shortest round-trip representation, so both read back exactly;
write_run followed by read_run reproduces the record bit for bit.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np

from .diagnostics import EnergyReport
from .errors import RunFormatError, SchemaVersionError
from .flow import ArcState
from .grid import Grid
from .tension import TensionProfile

SCHEMA_VERSION = "1"

TIMESERIES_COLUMNS = (
    "t", "E", "E_alt", "E_rel", "E_rel_back", "E_eps", "D",
    "cos_alpha", "max_stretch", "constraint_L1", "sigma_at_1",
    "dt", "newton_iters",
)


def _fmt(x: float) -> str:
    return "%.17g" % float(x)


@dataclass(frozen=True)
class Snapshot:
    """One persisted instant: time, state, and its tension profile."""

    t: float
    state: ArcState
    tension: TensionProfile


@dataclass
class RunRecord:
    """Everything a run produces, in memory."""

    config_echo: dict
    reports: list = field(default_factory=list)
    step_dts: list = field(default_factory=list)
    step_newton_iters: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    solver_stats: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.step_dts) != len(self.reports) or \
                len(self.step_newton_iters) != len(self.reports):
            raise ValueError("step_dts and step_newton_iters must align with reports")
        times = [r.t for r in self.reports]
        if any(t1 <= t0 for t0, t1 in zip(times, times[1:])):
            raise ValueError("reports must be strictly increasing in t")


def records_equal(a: RunRecord, b: RunRecord) -> bool:
    """Exact (bit-level for floats) equality of two records."""
    if a.config_echo != b.config_echo or a.summary != b.summary \
            or a.solver_stats != b.solver_stats:
        return False
    if a.reports != b.reports:
        return False
    if a.step_dts != b.step_dts or a.step_newton_iters != b.step_newton_iters:
        return False
    if len(a.snapshots) != len(b.snapshots):
        return False
    for sa, sb in zip(a.snapshots, b.snapshots):
        if sa.t != sb.t or sa.state.time != sb.state.time:
            return False
        if not np.array_equal(sa.state.positions, sb.state.positions):
            return False
        if not np.array_equal(sa.tension.values, sb.tension.values):
            return False
    return True


def write_run(record: RunRecord, directory) -> None:
    """Persist a record; overwrites existing files of the same run."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise RunFormatError(f"cannot create run directory: {exc}",
                             path=str(directory)) from exc

    config_doc = {"schema_version": SCHEMA_VERSION, "config": record.config_echo}
    (directory / "config.json").write_text(json.dumps(config_doc, indent=2,
                                                      sort_keys=True) + "\n")

    with open(directory / "timeseries.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TIMESERIES_COLUMNS)
        for rep, dt, iters in zip(record.reports, record.step_dts,
                                  record.step_newton_iters):
            row = [_fmt(getattr(rep, name)) for name in EnergyReport.FIELDS]
            row.append(_fmt(dt))
            row.append(str(int(iters)))
            writer.writerow(row)

    for snap in record.snapshots:
        d = snap.state.dim
        header = ["s"] + [f"x{c}" for c in range(d)] + ["sigma"]
        with open(directory / f"snapshot_t{_fmt(snap.t)}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            grid = snap.state.grid
            for i in range(grid.n_nodes):
                row = [_fmt(grid.nodes[i])]
                row += [_fmt(x) for x in snap.state.positions[i]]
                row.append(_fmt(snap.tension.values[i]))
                writer.writerow(row)

    summary_doc = {
        "schema_version": SCHEMA_VERSION,
        "summary": record.summary,
        "solver_stats": record.solver_stats,
        "snapshot_times": [snap.t for snap in record.snapshots],
        "snapshot_state_times": [snap.state.time for snap in record.snapshots],
    }
    (directory / "summary.json").write_text(json.dumps(summary_doc, indent=2,
                                                       sort_keys=True) + "\n")


def write_trajectory(traj, directory, max_snapshots: int = 50) -> None:
    """Persist a trajectory as snapshot CSVs plus an index; thins long runs
    to at most ``max_snapshots`` evenly spaced states (endpoints kept)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    count = len(traj.states)
    if count <= max_snapshots:
        indices = range(count)
    else:
        indices = sorted(set(
            int(round(k * (count - 1) / (max_snapshots - 1)))
            for k in range(max_snapshots)
        ))
    times = []
    for idx in indices:
        state = traj.states[idx]
        tension = traj.tensions[idx] if traj.tensions is not None else None
        times.append(state.time)
        d = state.dim
        header = ["s"] + [f"x{c}" for c in range(d)] + ["sigma"]
        grid = state.grid
        with open(directory / f"snapshot_t{_fmt(state.time)}.csv", "w",
                  newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(grid.n_nodes):
                row = [_fmt(grid.nodes[i])]
                row += [_fmt(x) for x in state.positions[i]]
                row.append(_fmt(tension.values[i]) if tension is not None else "")
                writer.writerow(row)
    index = {
        "schema_version": SCHEMA_VERSION,
        "times": times,
        "gravity": [float(x) for x in traj.gravity.direction],
    }
    (directory / "index.json").write_text(json.dumps(index, indent=2) + "\n")


def _load_json(path: Path) -> dict:
    if not path.exists():
        raise RunFormatError("missing file", path=str(path))
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise RunFormatError(f"invalid JSON: {exc.msg}", path=str(path),
                             line=exc.lineno) from exc
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"unsupported schema version {version!r}, expected {SCHEMA_VERSION!r}",
            path=str(path),
        )
    return doc


def _parse_float(text: str, path: Path, line: int) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise RunFormatError(f"bad float {text!r}", path=str(path),
                             line=line) from exc


def read_run(directory) -> RunRecord:
    """Reconstruct a record written by write_run, exactly."""
    directory = Path(directory)
    config_doc = _load_json(directory / "config.json")
    summary_doc = _load_json(directory / "summary.json")

    ts_path = directory / "timeseries.csv"
    if not ts_path.exists():
        raise RunFormatError("missing file", path=str(ts_path))
    reports = []
    step_dts = []
    step_iters = []
    with open(ts_path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1:
                if tuple(row) != TIMESERIES_COLUMNS:
                    raise RunFormatError(
                        f"unexpected columns {row!r}", path=str(ts_path), line=1
                    )
                continue
            if len(row) != len(TIMESERIES_COLUMNS):
                raise RunFormatError(
                    f"expected {len(TIMESERIES_COLUMNS)} fields, got {len(row)}",
                    path=str(ts_path), line=lineno,
                )
            values = [_parse_float(cell, ts_path, lineno) for cell in row[:-1]]
            reports.append(EnergyReport(*values[:len(EnergyReport.FIELDS)]))
            step_dts.append(values[-1])
            try:
                step_iters.append(int(row[-1]))
            except ValueError as exc:
                raise RunFormatError(f"bad integer {row[-1]!r}",
                                     path=str(ts_path), line=lineno) from exc

    snapshots = []
    snap_times = summary_doc.get("snapshot_times", [])
    snap_state_times = summary_doc.get("snapshot_state_times", snap_times)
    for t, state_time in zip(snap_times, snap_state_times):
        snap_path = directory / f"snapshot_t{_fmt(t)}.csv"
        if not snap_path.exists():
            raise RunFormatError("missing snapshot file", path=str(snap_path))
        with open(snap_path, newline="") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
        if not rows:
            raise RunFormatError("empty snapshot file", path=str(snap_path), line=1)
        header = rows[0]
        d = len(header) - 2
        data = []
        for lineno, row in enumerate(rows[1:], start=2):
            if len(row) != len(header):
                raise RunFormatError(
                    f"expected {len(header)} fields, got {len(row)}",
                    path=str(snap_path), line=lineno,
                )
            data.append([_parse_float(cell, snap_path, lineno) for cell in row])
        data = np.array(data)
        grid = Grid(len(data) - 1)
        state = ArcState(grid=grid, positions=data[:, 1:1 + d], time=state_time)
        tension = TensionProfile(grid=grid, values=data[:, 1 + d])
        snapshots.append(Snapshot(t=t, state=state, tension=tension))

    return RunRecord(
        config_echo=config_doc["config"],
        reports=reports,
        step_dts=step_dts,
        step_newton_iters=step_iters,
        snapshots=snapshots,
        solver_stats=summary_doc.get("solver_stats", {}),
        summary=summary_doc.get("summary", {}),
    )
