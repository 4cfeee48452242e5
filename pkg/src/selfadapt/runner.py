"""Scenario runs and archive reports, shared by the command line and the scripts."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .controller import ControllerReport, verify_controller
from .fx import FxSimulator, load_fx_scenario, make_fx_application
from .gsn import ArgumentEngine, instantiate_partial, load_gsn_pattern, parse_outline, render, requirements_for, resolve_evidence, validate
from .mape import Archive, KnowledgeRepository, LogRecord, SensorEvent, run_loop
from .uuv import UuvSimulator, load_uuv_scenario, make_uuv_application

APPS = ("uuv", "fx")
MODES = ("logical", "wall")


class CorruptArchive(ValueError):
    pass


@dataclass
class RunManifest:
    app: str
    scenario: Path | None = None
    registry: Path | None = None
    weights: tuple[float, float] | None = None
    deadline: float | None = None
    out: Path | None = None
    mode: str = "logical"
    seed: int = 0

    def __post_init__(self):
        if self.app not in APPS:
            raise ValueError(f"unknown application {self.app!r}; expected one of {APPS}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        for p in (self.scenario, self.registry):
            if p is not None and not Path(p).exists():
                raise FileNotFoundError(p)
        if self.deadline is not None and self.deadline < 0:
            raise ValueError("deadline must be >= 0")
        if self.weights is not None and (len(self.weights) != 2 or min(self.weights) < 0):
            raise ValueError("weights must be two non-negative numbers")


@dataclass
class RunResult:
    manifest: RunManifest
    records: list[LogRecord]
    app: Any
    design: ControllerReport
    partial: Any
    engine: ArgumentEngine
    simulator: Any
    archive: Path | None = None

    @property
    def decisions(self) -> list[LogRecord]:
        return [r for r in self.records if r.decision != "none"]


_DESIGN_CACHE: dict[str, ControllerReport] = {}


def design_evidence(app: str) -> ControllerReport:
    """Controller verification report for ``app`` (computed once per process)."""
    if app not in _DESIGN_CACHE:
        _DESIGN_CACHE[app] = verify_controller(app)
    return _DESIGN_CACHE[app]


def build_application(m: RunManifest):
    scenario = load_uuv_scenario(m.scenario) if m.app == "uuv" else load_fx_scenario(m.scenario)
    weights = m.weights or scenario.weights
    app = make_uuv_application(m.registry, weights) if m.app == "uuv" else make_fx_application(m.registry, weights)
    return app, scenario


def run_scenario(
    m: RunManifest,
    *,
    latency: Callable[[int, int], float] | None = None,
    fail_on: Sequence[type] = (),
    app: Any = None,
) -> RunResult:
    """Run a scenario end to end and, if ``m.out`` is set, archive it.

    ``latency(event_index, config_index)`` injects verification delays.
    ``app`` overrides the application built from the manifest (the scenario
    file is still read from the manifest).
    """
    built, scenario = build_application(m)
    app = app or built
    deadline = m.deadline if m.deadline is not None else scenario.deadline
    design = design_evidence(m.app)
    partial = instantiate_partial(load_gsn_pattern(), requirements_for(app), design, system=_system_name(m.app))
    engine = ArgumentEngine(app, partial)
    knowledge = KnowledgeRepository.for_app(app, deadline=deadline, partial_argument=partial)
    if m.app == "uuv":
        sim = UuvSimulator(scenario, len(app.specs), fail_on=fail_on)
    else:
        sim = FxSimulator(scenario, app.registry, app.initial_config(), fail_on=fail_on)

    archive = None
    if m.out is not None:
        archive = Archive(m.out)
        _write_design(Path(m.out), design, partial, m)
    t_start = time.monotonic()
    records: list[LogRecord] = []
    for k, ev in enumerate(sim.events()):
        t = ev.time if m.mode == "logical" else round(time.monotonic() - t_start, 6)
        sev = SensorEvent(t, dict(ev.values), ev.label, getattr(ev, "probe", False))
        lat = None if latency is None else (lambda i, k=k: latency(k, i))
        records += run_loop(
            knowledge,
            [sev],
            sim,
            engine,
            latency=lat,
            startup_analysis=(k == 0),
            on_record=archive.write if archive else None,
        )
    if archive is not None:
        archive.write_trace(sim.trace)
        if m.app == "uuv":
            rows = [{"sensor": s, "start": a, "end": b} for s, a, b in sim.probe_windows()]
            archive.write_trace(rows or [{"sensor": "", "start": "", "end": ""}], "probes.csv")
        archive.close()
    return RunResult(m, records, app, design, partial, engine, sim, Path(m.out) if m.out else None)


def _system_name(app: str) -> str:
    return {"uuv": "the UUV", "fx": "the FX trading system"}[app]


def _write_design(root: Path, design: ControllerReport, partial, m: RunManifest) -> None:
    (root / "design").mkdir(parents=True, exist_ok=True)
    design.write(root / "design" / "controller_report.txt")
    (root / "design" / "partial_argument.txt").write_text(render(partial, "text"))
    (root / "design" / "partial_argument.dot").write_text(render(partial, "dot"))
    manifest = {
        "app": m.app,
        "scenario": str(m.scenario) if m.scenario else "default",
        "registry": str(m.registry) if m.registry else "default",
        "weights": list(m.weights) if m.weights else None,
        "deadline": m.deadline,
        "mode": m.mode,
        "seed": m.seed,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")


# --------------------------------------------------------------------------- report


def _read_csv(path: Path) -> list[dict[str, str]]:
    return list(csv.DictReader(io.StringIO(path.read_text())))


def load_archive(root: str | Path) -> dict[str, Any]:
    root = Path(root)
    log = root / "decisions.log"
    if not log.exists() or not log.read_text().strip():
        raise CorruptArchive(f"{root}: missing or empty decisions.log")
    try:
        records = [json.loads(line) for line in log.read_text().splitlines() if line.strip()]
    except json.JSONDecodeError as exc:
        raise CorruptArchive(f"{root}: unreadable decisions.log ({exc})") from None
    timing = {}
    if (root / "timing.csv").exists():
        timing = {int(r["seq"]): r for r in _read_csv(root / "timing.csv")}
    return {"root": root, "records": records, "timing": timing}


def check_archive(root: str | Path) -> list[str]:
    """Referential completeness: every Adapt/Failsafe has its argument and evidence."""
    a = load_archive(root)
    root = a["root"]
    problems = []
    for rec in a["records"]:
        if rec["decision"] not in ("adapt", "failsafe"):
            continue
        seq = rec["seq"]
        ev_path = root / "evidence" / f"{seq:04d}.csv"
        arg_path = root / "arguments" / f"{seq:04d}.txt"
        if not rec["argument_version"]:
            problems.append(f"{seq}: {rec['decision']} without an argument version")
            continue
        if not arg_path.exists():
            problems.append(f"{seq}: argument file missing")
            continue
        arg = parse_outline(arg_path.read_text())
        if arg.version != rec["argument_version"]:
            problems.append(f"{seq}: argument version {arg.version} != logged {rec['argument_version']}")
        violations = validate(arg)
        if violations:
            problems.append(f"{seq}: argument does not validate ({violations[0]})")
        rows = _read_csv(ev_path) if ev_path.exists() else []
        if rec["evaluated"] and not ev_path.exists():
            problems.append(f"{seq}: evidence file missing")
        if rec["decision"] == "adapt" and not rows:
            problems.append(f"{seq}: adapt without evidence rows")
        context = arg.node("ConfigDef").text.removeprefix("Active configuration ") if "ConfigDef" in arg else None
        if context != rec["config_text"]:
            problems.append(f"{seq}: argument context {context!r} != active configuration {rec['config_text']!r}")
        bad = resolve_evidence(arg, rows, rec["evidence_digest"])
        if bad:
            problems.append(f"{seq}: unresolved evidence in {', '.join(bad)}")
    return problems


def summarize_archive(root: str | Path) -> str:
    a = load_archive(root)
    problems = check_archive(root)
    cols = ("seq", "time", "event", "monitor", "decision", "config", "feasible", "evaluated", "analysis_s", "version")
    rows = []
    for rec in a["records"]:
        t = a["timing"].get(rec["seq"], {})
        rows.append(
            (
                str(rec["seq"]),
                f"{rec['time']:g}",
                rec["event"],
                rec["monitor"],
                rec["decision"] + (f" ({rec['reason']})" if rec["reason"] else ""),
                rec["config_text"],
                "" if rec["feasible"] is None else str(rec["feasible"]),
                "" if rec["evaluated"] is None else str(rec["evaluated"]),
                _fmt_s(t.get("analysis_s")),
                rec["argument_version"],
            )
        )
    widths = [max(len(c), *(len(r[i]) for r in rows)) for i, c in enumerate(cols)]
    line = lambda r: "  ".join(x.ljust(w) for x, w in zip(r, widths)).rstrip()
    out = [f"archive: {a['root']}", "", line(cols), line(tuple("-" * w for w in widths))]
    out += [line(r) for r in rows]
    n_adapt = sum(r["decision"] == "adapt" for r in a["records"])
    n_fs = sum(r["decision"] == "failsafe" for r in a["records"])
    out += ["", f"events: {len(rows)}  adapt: {n_adapt}  failsafe: {n_fs}"]
    out.append("referential completeness: " + ("ok" if not problems else f"{len(problems)} problem(s)"))
    out += [f"  {p}" for p in problems]
    return "\n".join(out) + "\n"


def _fmt_s(v: Any) -> str:
    if v in (None, "", "None"):
        return ""
    return f"{float(v):.3f}"


def feasibility_rows(result: RunResult) -> list[dict[str, Any]]:
    """Per-decision, per-configuration feasibility and cost (plot data)."""
    out = []
    for rec in result.decisions:
        if rec.evidence is None:
            continue
        for entry in rec.evidence.entries:
            row: dict[str, Any] = {"seq": rec.seq, "event": rec.event, "config": str(entry.config)}
            for r in entry.results:
                row[r.name] = r.numeric_value
            row["feasible"] = entry.feasible
            row["cost"] = result.app.cost(entry) if entry.feasible else ""
            row["selected"] = entry.config == rec.config
            out.append(row)
    return out


def write_rows(rows: Sequence[Mapping[str, Any]], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols: list[str] = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return path
