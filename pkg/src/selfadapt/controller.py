"""Design-time verification of the MAPE controller networks.

Runs the generic correctness properties P1-P9 and application properties
(R4) over an automata network plus stubs, and ships a set of seeded
mutations used to show that the checker actually catches faults.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

from .automata import (
    CheckResult,
    DeadlockFree,
    Invariant,
    LeadsTo,
    Network,
    StateGraph,
    Trace,
    check,
    compose_and_explore,
    dead_channels,
    load_network_dict,
    mutate,
    network_from_dict,
    replay,
)

DATA = Path(__file__).parent / "data"

GENERIC: dict[str, tuple[Any, str]] = {
    "P1": (DeadlockFree(), "the controller network never deadlocks"),
    "P2": (LeadsTo("Monitor.StartAnalysis", "Analyzer.Analyse"), "a triggered analysis is eventually carried out"),
    "P3": (LeadsTo("Analyzer.Adapt", "Planner.PlanCreated"), "an adaptation decision eventually yields a plan"),
    "P4": (LeadsTo("Planner.PlanCreated", "Executor.PlanExecuted"), "a created plan is eventually executed"),
    "P5": (LeadsTo("Monitor.ProcessSensorData", "Monitor.Finished"), "the monitor always finishes processing sensor data"),
    "P6": (LeadsTo("Analyzer.Analyse", "Analyzer.AnalysisFinished"), "the analyzer always finishes"),
    "P7": (LeadsTo("Planner.Plan", "Planner.PlanCreated"), "the planner always produces a plan"),
    "P8": (LeadsTo("Executor.Execute", "Executor.PlanExecuted"), "the executor always completes a plan"),
    "P9": (None, "adaptation is only decided when the new configuration differs from the current one"),
}


def query_text(q) -> str:
    if isinstance(q, DeadlockFree):
        return "AG not deadlock"
    if isinstance(q, LeadsTo):
        return f"AG ({q.p} -> AF {q.q})"
    if isinstance(q, Invariant):
        return f"AG ({q.pred})"
    raise TypeError(q)


def p9_query(network: Network) -> Invariant:
    if not network.config_differs:
        raise ValueError(f"network {network.name!r} does not define config_differs, needed by P9")
    return Invariant(f"not Analyzer.Adapt or ({network.config_differs})")


def app_queries(network: Network) -> dict[str, tuple[Any, str]]:
    """Application properties declared in the network file."""
    out = {}
    for pid, spec in network.queries.items():
        kind = spec.get("kind", "leadsto")
        if kind == "leadsto":
            q = LeadsTo(spec["p"], spec["q"])
        elif kind == "invariant":
            q = Invariant(spec["pred"])
        elif kind == "deadlock":
            q = DeadlockFree()
        else:
            raise ValueError(f"{pid}: unknown query kind {kind!r}")
        out[pid] = (q, spec.get("text", ""))
    return out


@dataclass(frozen=True)
class PropertyVerdict:
    pid: str
    query: str
    description: str
    holds: bool
    reason: str = ""
    trace: Trace | None = None
    trace_text: str = ""


@dataclass
class ControllerReport:
    network: str
    n_states: int
    n_transitions: int
    results: list[PropertyVerdict]
    dead_channels: list[str] = field(default_factory=list)
    elapsed: float = 0.0
    graph: StateGraph | None = field(default=None, repr=False, compare=False)

    @property
    def verdicts(self) -> dict[str, bool]:
        return {r.pid: r.holds for r in self.results}

    @property
    def all_hold(self) -> bool:
        return all(r.holds for r in self.results)

    def failing(self) -> list[PropertyVerdict]:
        return [r for r in self.results if not r.holds]

    def to_text(self, include_time: bool = False) -> str:
        lines = [
            f"# controller verification report: {self.network}",
            f"states: {self.n_states}",
            f"transitions: {self.n_transitions}",
        ]
        if self.dead_channels:
            lines.append(f"receive-only channels: {', '.join(self.dead_channels)}")
        if include_time:
            lines.append(f"elapsed_s: {self.elapsed:.3f}")
        lines.append("")
        for r in self.results:
            lines.append(f"{r.pid}: {'HOLDS' if r.holds else 'FAILS'}  {r.query}")
            lines.append(f"  {r.description}")
            if not r.holds:
                lines.append(f"  reason: {r.reason}")
                lines.append("  counterexample:")
                lines.append(r.trace_text)
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text())
        return path


def verify_generic_suite(
    network: Network,
    app_properties: Mapping[str, Any] | None = None,
    *,
    cap: int | None = None,
) -> ControllerReport:
    """Check P1-P9 plus ``app_properties`` (id -> query or (query, text))."""
    t0 = time.perf_counter()
    graph = compose_and_explore(network, **({"cap": cap} if cap else {}))
    suite: dict[str, tuple[Any, str]] = {}
    for pid, (q, text) in GENERIC.items():
        suite[pid] = (p9_query(network) if pid == "P9" else q, text)
    for pid, spec in (app_properties or {}).items():
        suite[pid] = spec if isinstance(spec, tuple) else (spec, "")
    results = []
    for pid, (q, text) in suite.items():
        res: CheckResult = check(graph, q)
        results.append(
            PropertyVerdict(
                pid,
                query_text(q),
                text,
                res.holds,
                res.reason,
                res.trace,
                res.trace.render(graph) if res.trace else "",
            )
        )
    return ControllerReport(
        network.name,
        graph.n_states,
        graph.n_transitions,
        results,
        dead_channels(network),
        time.perf_counter() - t0,
        graph,
    )


def trace_replays(network: Network, verdict: PropertyVerdict, query) -> bool:
    """Replay a counterexample and confirm it ends in a state exhibiting the violation."""
    if verdict.trace is None:
        return False
    visited = replay(network, verdict.trace)  # raises on an illegal move
    graph = compose_and_explore(network)
    if visited != [graph.states[i] for i in verdict.trace.states]:
        return False
    end = verdict.trace.states[-1]
    if isinstance(query, DeadlockFree):
        return not graph.succ[end] and not graph.is_terminal(end)
    if isinstance(query, Invariant):
        return not graph.holds(query.pred, end)
    if isinstance(query, LeadsTo):
        # some p-state on the path, no q-state after it, and the path ends in a dead end or closes a cycle
        states = verdict.trace.states
        p_at = [k for k, s in enumerate(states) if graph.holds(query.p, s)]
        k = next((i for i in p_at if not any(graph.holds(query.q, s) for s in states[i:])), None)
        if k is None:
            return False
        if verdict.trace.loop_start is not None:
            return states[-1] in states[k:-1]
        return not graph.succ[end]
    raise TypeError(query)


# --------------------------------------------------------------------------- shipped networks


def controller_network_dict(app: str) -> dict[str, Any]:
    path = DATA / f"{app}_controller.toml"
    if not path.exists():
        raise ValueError(f"no controller network for application {app!r}")
    return load_network_dict(path)


def load_controller_network(app: str) -> Network:
    return network_from_dict(controller_network_dict(app))


def verify_controller(app_or_network: str | Network) -> ControllerReport:
    net = load_controller_network(app_or_network) if isinstance(app_or_network, str) else app_or_network
    return verify_generic_suite(net, app_queries(net))


# --------------------------------------------------------------------------- mutations


def _auto(d: dict, name: str) -> dict:
    return next(a for a in d["automata"] if a["name"] == name)


def _edge(d: dict, auto: str, src: str, dst: str, sync: str | None = None) -> dict:
    for e in _auto(d, auto)["edges"]:
        if e["from"] == src and e["to"] == dst and (sync is None or e.get("sync") == sync):
            return e
    raise KeyError(f"{auto}: no edge {src} -> {dst} {sync or ''}")


def _drop_start_executing(d: dict) -> None:
    _edge(d, "Planner", "PlanCreated", "Idle").pop("sync")


def _failsafe_keeps_speed(d: dict) -> None:
    e = _edge(d, "Analyzer", "Analyse", "FailsafeSelected")
    if d["name"] == "uuv":
        e["action"] = "new_bits = cur_bits; new_sp = 1"
    else:
        e["action"] = "new_cfg = cur_cfg; new_nosvc = 0"


def _monitor_never_starts_analysis(d: dict) -> None:
    _edge(d, "Monitor", "StartAnalysis", "Finished").pop("sync")


def _executor_never_clears(d: dict) -> None:
    e = _edge(d, "Executor", "Execute", "Execute", "sensorON!" if d["name"] == "uuv" else "changeService!")
    if d["name"] == "uuv":
        e["action"] = "cur_bits = cur_bits | (plan_on & -plan_on)"
    else:
        e["action"] = "cur_cfg = cur_cfg ^ ((cur_cfg ^ new_cfg) & (plan & -plan)); cur_nosvc = new_nosvc"


def _adapt_guard_true(d: dict) -> None:
    _edge(d, "Analyzer", "AnalysisFinished", "Adapt")["guard"] = "True"


def _no_deadline_handling(d: dict) -> None:
    a = _auto(d, "Analyzer")
    a["edges"] = [e for e in a["edges"] if not (e["from"] == "Analyse" and e["to"] == "FailsafeSelected")]


def _planner_skips_plan_created(d: dict) -> None:
    e = _edge(d, "Planner", "Plan", "PlanCreated")
    e["to"] = "Plan"
    e["guard"] = "False"


@dataclass(frozen=True)
class Mutation:
    name: str
    description: str
    apply: Callable[[dict], None]
    breaks: str  # property id expected to fail


MUTATIONS: tuple[Mutation, ...] = (
    Mutation("drop_start_executing", "planner never sends startExecuting", _drop_start_executing, "P4"),
    Mutation("failsafe_keeps_speed", "deadline failsafe does not select the safe configuration", _failsafe_keeps_speed, "R4"),
    Mutation("monitor_never_starts_analysis", "monitor drops the startAnalysis send", _monitor_never_starts_analysis, "P2"),
    Mutation("executor_never_clears", "executor never removes a done step from the plan", _executor_never_clears, "P8"),
    Mutation("adapt_guard_true", "analyzer may adapt to the current configuration", _adapt_guard_true, "P9"),
    Mutation("no_deadline_handling", "analyzer ignores an expired deadline", _no_deadline_handling, "P1"),
    Mutation("planner_stuck", "planner can never finish a plan", _planner_skips_plan_created, "P7"),
)


def mutated_network(app: str, mutation: str | Mutation) -> Network:
    m = mutation if isinstance(mutation, Mutation) else next(x for x in MUTATIONS if x.name == mutation)
    return network_from_dict(mutate(controller_network_dict(app), m.apply))


def suite_query(network: Network, pid: str):
    if pid == "P9":
        return p9_query(network)
    if pid in GENERIC:
        return GENERIC[pid][0]
    return app_queries(network)[pid][0]
