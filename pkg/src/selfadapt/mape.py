"""Event-triggered MAPE loop over a knowledge repository.

The loop is application-agnostic. An application object (see
:class:`~selfadapt.uuv.UuvApplication`, :class:`~selfadapt.fx.FxApplication`)
supplies the configuration space, model factory, requirements, cost,
failsafe rule and plan/apply functions.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence, Union

from .verifier import BatchOutcome, ConfigResult, verify_config_space

__all__ = [
    "UnknownParameter",
    "StaleTimestamp",
    "SameConfiguration",
    "EffectorFailure",
    "SensorEvent",
    "MonitorResult",
    "Keep",
    "Adapt",
    "Failsafe",
    "AdaptationPlan",
    "KnowledgeRepository",
    "LogRecord",
    "monitor_step",
    "analyze",
    "plan",
    "execute",
    "run_loop",
    "Archive",
    "SIGNIFICANCE",
]

SIGNIFICANCE = 0.01
MAX_REANALYSES = 3


class UnknownParameter(KeyError):
    pass


class StaleTimestamp(ValueError):
    pass


class SameConfiguration(ValueError):
    pass


class EffectorFailure(RuntimeError):
    def __init__(self, step):
        super().__init__(str(step))
        self.step = step


class Application(Protocol):
    name: str
    requirement_ids: tuple[str, ...]

    def configurations(self) -> list: ...
    def model_factory(self, observations: Mapping[str, float]) -> Any: ...
    def properties(self, config) -> Sequence: ...
    def cost(self, entry: ConfigResult) -> float: ...
    def failsafe(self, current) -> Any: ...
    def is_failsafe(self, config) -> bool: ...
    def plan(self, current, target) -> list: ...
    def apply(self, steps, config) -> Any: ...


@dataclass(frozen=True)
class SensorEvent:
    time: float
    values: Mapping[str, float]
    label: str = ""
    probe: bool = False


class MonitorResult(enum.Enum):
    NO_ACTION = "none"
    ANALYSIS_TRIGGERED = "analysis"


# --------------------------------------------------------------------------- decisions


@dataclass(frozen=True)
class Keep:
    evidence: BatchOutcome | None = None
    kind = "keep"


@dataclass(frozen=True)
class Adapt:
    target: Any
    evidence: BatchOutcome
    kind = "adapt"


@dataclass(frozen=True)
class Failsafe:
    target: Any
    reason: str
    evidence: BatchOutcome | None = None
    kind = "failsafe"


Decision = Union[Keep, Adapt, Failsafe]


@dataclass(frozen=True)
class AdaptationPlan:
    steps: tuple = ()

    def __iter__(self):
        return iter(self.steps)

    def __len__(self) -> int:
        return len(self.steps)

    def __str__(self) -> str:
        return "[" + ", ".join(map(str, self.steps)) + "]"


# --------------------------------------------------------------------------- knowledge


@dataclass
class LogRecord:
    seq: int
    time: float
    event: str
    monitor: str
    decision: str
    config: Any
    plan: tuple[str, ...] = ()
    reason: str = ""
    evidence: BatchOutcome | None = None
    evidence_digest: str = ""
    argument: Any = None
    argument_version: str = ""
    feasible: int | None = None
    analysis_time: float | None = None
    latency: float | None = None
    error: str = ""

    def to_json(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "time": self.time,
            "event": self.event,
            "monitor": self.monitor,
            "decision": self.decision,
            "config": self.config.to_json(),
            "config_text": str(self.config),
            "plan": list(self.plan),
            "reason": self.reason,
            "evidence_digest": self.evidence_digest,
            "argument_version": self.argument_version,
            "feasible": self.feasible,
            "evaluated": None if self.evidence is None else len(self.evidence.entries),
            "error": self.error,
        }


@dataclass
class KnowledgeRepository:
    app: Any
    current_config: Any
    observations: dict[str, float]
    deadline: float = 2.0
    max_time: float | None = None
    partial_argument: Any = None
    timestamps: dict[str, float] = field(default_factory=dict)
    evidence_log: list[LogRecord] = field(default_factory=list)

    def __post_init__(self):
        if self.max_time is None:
            self.max_time = self.deadline

    @classmethod
    def for_app(cls, app, deadline: float = 2.0, partial_argument=None) -> "KnowledgeRepository":
        return cls(app, app.initial_config(), dict(app.initial_observations()), deadline, None, partial_argument)

    def append(self, record: LogRecord) -> None:
        if self.evidence_log and record.time < self.evidence_log[-1].time:
            raise StaleTimestamp("evidence log is monotonically timestamped")
        self.evidence_log.append(record)

    @property
    def last_time(self) -> float:
        return max(self.timestamps.values(), default=-math.inf)


# --------------------------------------------------------------------------- MAPE steps


def monitor_step(event: SensorEvent, knowledge: KnowledgeRepository, threshold: float = SIGNIFICANCE) -> MonitorResult:
    """Record ``event``; trigger analysis on a relative change of at least ``threshold``."""
    for name in event.values:
        if name not in knowledge.observations:
            raise UnknownParameter(name)
        if event.time < knowledge.timestamps.get(name, -math.inf):
            raise StaleTimestamp(f"{name}: {event.time} is older than the last observation")
    significant = False
    for name, new in event.values.items():
        old = knowledge.observations[name]
        change = abs(new - old)
        if (old == 0 and change > 0) or (old != 0 and change >= threshold * abs(old)):
            significant = True
        knowledge.observations[name] = float(new)
        knowledge.timestamps[name] = event.time
    return MonitorResult.ANALYSIS_TRIGGERED if significant else MonitorResult.NO_ACTION


def analyze(
    knowledge: KnowledgeRepository,
    deadline: float | None = None,
    *,
    latency: Callable[[int], float] | None = None,
):
    """Verify every configuration and pick the cheapest feasible one.

    Returns Keep, Adapt or Failsafe. Ties go to the earliest configuration
    in enumeration order.
    """
    app = knowledge.app
    budget = knowledge.deadline if deadline is None else deadline
    if budget <= 0:
        return Failsafe(app.failsafe(knowledge.current_config), "deadline", BatchOutcome(deadline_exceeded=True, deadline=budget))
    factory = app.model_factory(knowledge.observations)
    batch = verify_config_space(factory, app.configurations(), app.properties, budget, latency=latency)
    if batch.deadline_exceeded:
        return Failsafe(app.failsafe(knowledge.current_config), "deadline", batch)
    feasible = batch.feasible
    if not feasible:
        return Failsafe(app.failsafe(knowledge.current_config), "infeasible", batch)
    best = min(feasible, key=app.cost)
    if best.config == knowledge.current_config:
        return Keep(batch)
    return Adapt(best.config, batch)


def plan(current, target, app) -> AdaptationPlan:
    if current == target:
        raise SameConfiguration(str(current))
    return AdaptationPlan(tuple(app.plan(current, target)))


def execute(steps: AdaptationPlan | Sequence, effectors, knowledge: KnowledgeRepository):
    """Issue the steps in order. On failure the partial state becomes current."""
    app = knowledge.app
    start = knowledge.current_config
    done = []
    for step in steps:
        try:
            effectors.command(step)
        except EffectorFailure:
            knowledge.current_config = app.apply(done, start)
            raise
        done.append(step)
    knowledge.current_config = app.apply(done, start)
    return knowledge.current_config


# --------------------------------------------------------------------------- loop


def run_loop(
    knowledge: KnowledgeRepository,
    events: Iterable[SensorEvent],
    effectors,
    argument_engine=None,
    *,
    latency: Callable[[int], float] | None = None,
    startup_analysis: bool = True,
    on_record: Callable[[LogRecord], None] | None = None,
) -> list[LogRecord]:
    """Process events one at a time and return the log records appended.

    The first event always triggers analysis (the system starts in its
    failsafe configuration). After every Adapt or Failsafe, the argument
    engine emits a full assurance argument for the configuration in effect.
    """
    out: list[LogRecord] = []
    app = knowledge.app
    first = startup_analysis
    for ev in events:
        t0 = time.monotonic()
        seq = len(knowledge.evidence_log)
        label = ev.label or f"t={ev.time:g}"
        try:
            trig = monitor_step(ev, knowledge)
        except (UnknownParameter, StaleTimestamp) as exc:
            rec = LogRecord(seq, ev.time, label, "error", "none", knowledge.current_config, error=f"{type(exc).__name__}: {exc}")
            knowledge.append(rec)
            out.append(rec)
            continue
        if first:
            trig, first = MonitorResult.ANALYSIS_TRIGGERED, False
        if trig is MonitorResult.NO_ACTION:
            rec = LogRecord(seq, ev.time, label, trig.value, "none", knowledge.current_config)
            knowledge.append(rec)
            out.append(rec)
            if on_record:
                on_record(rec)
            continue

        errors = []
        for _ in range(MAX_REANALYSES):
            remaining = knowledge.deadline - (time.monotonic() - t0)
            a0 = time.monotonic()
            decision = analyze(knowledge, max(remaining, 0.0), latency=latency)
            analysis_time = time.monotonic() - a0
            steps = AdaptationPlan()
            if not isinstance(decision, Keep) and decision.target != knowledge.current_config:
                steps = plan(knowledge.current_config, decision.target, app)
            try:
                execute(steps, effectors, knowledge)
                break
            except EffectorFailure as exc:
                errors.append(f"EffectorFailure: {exc.step}")
                t0 = time.monotonic()  # re-analysis gets a fresh budget
        latency_s = time.monotonic() - t0
        batch = decision.evidence
        rec = LogRecord(
            seq,
            ev.time,
            label,
            trig.value,
            decision.kind,
            knowledge.current_config,
            plan=tuple(map(str, steps)),
            reason=getattr(decision, "reason", ""),
            evidence=batch,
            evidence_digest="" if batch is None else batch.digest(),
            feasible=None if batch is None else len(batch.feasible),
            analysis_time=analysis_time,
            latency=latency_s,
            error="; ".join(errors),
        )
        if not isinstance(decision, Keep) and argument_engine is not None and knowledge.current_config == decision.target:
            arg = argument_engine.emit(decision, knowledge, seq, ev.time)
            rec.argument = arg
            rec.argument_version = arg.version
        knowledge.append(rec)
        out.append(rec)
        if on_record:
            on_record(rec)
    return out


# --------------------------------------------------------------------------- archive


class Archive:
    """Directory layout: decisions.log, evidence/<seq>.csv, arguments/<seq>.{dot,txt},
    trace.csv, and timing.csv (the only file carrying wall-clock values)."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "evidence").mkdir(parents=True, exist_ok=True)
        (self.root / "arguments").mkdir(parents=True, exist_ok=True)
        self._log = self.root / "decisions.log"
        self._log.write_text("")
        self._timing_rows: list[dict[str, Any]] = []

    def write(self, rec: LogRecord) -> None:
        from .gsn import render

        if rec.evidence is not None and rec.evidence.entries:
            (self.root / "evidence" / f"{rec.seq:04d}.csv").write_text(rec.evidence.to_csv())
        if rec.argument is not None:
            (self.root / "arguments" / f"{rec.seq:04d}.dot").write_text(render(rec.argument, "dot"))
            (self.root / "arguments" / f"{rec.seq:04d}.txt").write_text(render(rec.argument, "text"))
        with self._log.open("a") as fh:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
        self._timing_rows.append(
            {"seq": rec.seq, "event": rec.event, "decision": rec.decision, "analysis_s": rec.analysis_time, "latency_s": rec.latency}
        )

    def write_trace(self, rows: Sequence[Mapping[str, Any]], name: str = "trace.csv") -> None:
        if not rows:
            return
        cols: list[str] = []
        for r in rows:
            cols += [k for k in r if k not in cols]
        buf = io.StringIO()
        w = csv.DictWriter(buf, cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        (self.root / name).write_text(buf.getvalue())

    def close(self) -> None:
        buf = io.StringIO()
        w = csv.DictWriter(buf, ["seq", "event", "decision", "analysis_s", "latency_s"], lineterminator="\n")
        w.writeheader()
        w.writerows(self._timing_rows)
        (self.root / "timing.csv").write_text(buf.getvalue())
