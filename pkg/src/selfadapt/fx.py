"""FX trading case study: service registry, workflow DTMC, requirements, simulator."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import tomli

from .models import Bound, MarkovModel, ModelKind, ModelTemplate, Parameter, ProbReach, ReachReward
from .verifier import ConfigResult

DATA = Path(__file__).parent / "data"

OPERATIONS = ("MarketWatch", "TechnicalAnalysis", "FundamentalAnalysis", "Alarm", "Order", "Notification")
SHORT = {"MarketWatch": "MW", "TechnicalAnalysis": "TA", "FundamentalAnalysis": "FA", "Alarm": "Al", "Order": "Or", "Notification": "No"}
NO_SVC = "NoSvc"

__all__ = [
    "OPERATIONS",
    "NO_SVC",
    "ServiceSpec",
    "WorkflowParams",
    "FxConfig",
    "ChangeService",
    "UnknownService",
    "build_fx_template",
    "enumerate_fx_configs",
    "fx_requirements",
    "fx_cost",
    "FxApplication",
    "FxModelFactory",
    "FxSimulator",
    "FxScenario",
    "load_fx_registry",
    "load_fx_scenario",
    "make_fx_application",
    "plan_fx",
    "apply_fx",
]


class UnknownService(KeyError):
    pass


@dataclass(frozen=True)
class ServiceSpec:
    operation: str
    id: str
    response_time: float
    reliability: float
    price: float

    def __post_init__(self):
        if self.operation not in OPERATIONS:
            raise ValueError(f"unknown operation {self.operation!r}")
        if not 0 <= self.reliability <= 1:
            raise ValueError(f"{self.id}: reliability must be in [0, 1]")
        if self.response_time < 0 or self.price < 0:
            raise ValueError(f"{self.id}: time and price must be >= 0")


@dataclass(frozen=True)
class WorkflowParams:
    """Branch probabilities of the workflow (tuned defaults, see README)."""

    expert: float = 0.55
    ta_satisfied: float = 0.2
    ta_unsatisfied: float = 0.5
    ta_high_variance: float = 0.3
    fa_proceed: float = 0.6

    def __post_init__(self):
        for k in ("expert", "ta_satisfied", "ta_unsatisfied", "ta_high_variance", "fa_proceed"):
            v = getattr(self, k)
            if not 0 <= v <= 1:
                raise ValueError(f"{k}={v} is not a probability")
        if abs(self.ta_satisfied + self.ta_unsatisfied + self.ta_high_variance - 1) > 1e-9:
            raise ValueError("technical-analysis outcomes must sum to 1")
        if self.ta_unsatisfied + self.ta_high_variance >= 1:
            raise ValueError("expert-mode loop needs an escape probability > 0")


# --------------------------------------------------------------------------- DTMC template

FX_STATES = ("start", "MW", "TA", "Al", "FA", "Or", "No", "done", "fail")


def build_fx_template(params: WorkflowParams = WorkflowParams()) -> ModelTemplate:
    """Parametric workflow DTMC with parameters p_X, time_X, price_X per operation.

    ``bypass_Or`` (0 or 1) routes Order straight to completion with no
    time or price; this is the failsafe configuration.
    """
    i = {s: k for k, s in enumerate(FX_STATES)}
    pr = params
    tr = [
        ("start", "MW", repr(pr.expert)),
        ("start", "FA", repr(1 - pr.expert)),
        ("MW", "TA", "p_MW"),
        ("MW", "fail", "1 - p_MW"),
        ("TA", "Or", f"p_TA * {pr.ta_satisfied!r}"),
        ("TA", "MW", f"p_TA * {pr.ta_unsatisfied!r}"),
        ("TA", "Al", f"p_TA * {pr.ta_high_variance!r}"),
        ("TA", "fail", "1 - p_TA"),
        ("Al", "MW", "p_Al"),
        ("Al", "fail", "1 - p_Al"),
        ("FA", "Or", f"p_FA * {pr.fa_proceed!r}"),
        ("FA", "done", f"p_FA * {1 - pr.fa_proceed!r}"),
        ("FA", "fail", "1 - p_FA"),
        ("Or", "No", "(1 - bypass_Or) * p_Or"),
        ("Or", "fail", "(1 - bypass_Or) * (1 - p_Or)"),
        ("Or", "done", "bypass_Or"),
        ("No", "done", "p_No"),
        ("No", "fail", "1 - p_No"),
    ]
    params_list = [Parameter("bypass_Or", "flag", 0.0, 1.0)]
    time_r, price_r = {}, {}
    for op in OPERATIONS:
        s = SHORT[op]
        params_list += [
            Parameter(f"p_{s}", "probability", 0.0, 1.0),
            Parameter(f"time_{s}", "s", 0.0),
            Parameter(f"price_{s}", "currency", 0.0),
        ]
        gate = "(1 - bypass_Or) * " if s == "Or" else ""
        time_r[i[s]] = f"{gate}time_{s}"
        price_r[i[s]] = f"{gate}price_{s}"
    return ModelTemplate(
        kind=ModelKind.DTMC,
        states=FX_STATES,
        transitions=tuple((i[a], i[b], w) for a, b, w in tr),
        initial=0,
        labels={"done": frozenset({i["done"]}), "fail": frozenset({i["fail"]}), "end": frozenset({i["done"], i["fail"]})},
        state_rewards={"time": time_r, "price": price_r},
        transition_rewards={},
        parameters=tuple(params_list),
    )


# --------------------------------------------------------------------------- configurations


@dataclass(frozen=True)
class FxConfig:
    """Selected implementation id per operation, in :data:`OPERATIONS` order."""

    services: tuple[str, ...]
    index: int | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.services) != len(OPERATIONS):
            raise ValueError("one service per operation required")

    def service(self, operation: str) -> str:
        return self.services[OPERATIONS.index(operation)]

    def __str__(self) -> str:
        return "{" + ", ".join(self.services) + "}"

    def as_row(self) -> dict[str, Any]:
        row: dict[str, Any] = {"config_index": "" if self.index is None else self.index}
        row.update({SHORT[op]: s for op, s in zip(OPERATIONS, self.services)})
        return row

    def to_json(self) -> dict[str, Any]:
        return {"services": list(self.services), "index": self.index}

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "FxConfig":
        return cls(tuple(d["services"]), d.get("index"))


def enumerate_fx_configs(registry: Mapping[str, Sequence[ServiceSpec]]) -> list[FxConfig]:
    """Cross product of implementations; the first operation is the most significant digit.

    With two implementations per operation, entry k has base-2 index k.
    """
    choices = []
    for op in OPERATIONS:
        impls = registry.get(op, ())
        if not impls:
            raise ValueError(f"no implementation registered for {op}")
        choices.append([s.id for s in impls])
    return [FxConfig(tuple(c), k) for k, c in enumerate(itertools.product(*choices))]


@dataclass(frozen=True)
class ChangeService:
    operation: str
    implementation: str

    def __str__(self) -> str:
        return f"ChangeService({self.operation}, {self.implementation})"


def plan_fx(current: FxConfig, target: FxConfig) -> list[ChangeService]:
    return [ChangeService(op, b) for op, a, b in zip(OPERATIONS, current.services, target.services) if a != b]


def apply_fx(steps: Sequence[ChangeService], config: FxConfig) -> FxConfig:
    services = list(config.services)
    for s in steps:
        if not isinstance(s, ChangeService):
            raise TypeError(f"not an FX step: {s!r}")
        services[OPERATIONS.index(s.operation)] = s.implementation
    return FxConfig(tuple(services))


# --------------------------------------------------------------------------- requirements


def fx_requirements(reliability_min: float = 0.9, time_max: float = 5.0) -> tuple[ProbReach, ReachReward, ReachReward]:
    """R1 and R2 bounded properties, plus the unbounded price query used by R3."""
    return (
        ProbReach(Bound.GE, reliability_min, "done", name="R1"),
        ReachReward("time", Bound.LE, time_max, "end", name="R2"),
        ReachReward("price", Bound.QUERY, None, "end", name="price"),
    )


def fx_cost(price: float, time: float, weights: tuple[float, float] = (1.0, 2.0)) -> float:
    return weights[0] * price + weights[1] * time


def service_observations(registry: Mapping[str, Sequence[ServiceSpec]]) -> dict[str, float]:
    obs = {}
    for impls in registry.values():
        for s in impls:
            obs[f"p_{s.id}"] = s.reliability
            obs[f"time_{s.id}"] = s.response_time
            obs[f"price_{s.id}"] = s.price
    return obs


class FxModelFactory:
    def __init__(self, template: ModelTemplate, observations: Mapping[str, float]):
        self.template = template
        self.obs = dict(observations)

    def bindings(self, config: FxConfig) -> dict[str, float]:
        b = {"bypass_Or": 0.0}
        for op, sid in zip(OPERATIONS, config.services):
            s = SHORT[op]
            if sid == NO_SVC:
                if op != "Order":
                    raise ValueError("only Order may be bypassed")
                b.update({"bypass_Or": 1.0, f"p_{s}": 1.0, f"time_{s}": 0.0, f"price_{s}": 0.0})
                continue
            for k in ("p", "time", "price"):
                key = f"{k}_{sid}"
                if key not in self.obs:
                    raise UnknownService(sid)
                b[f"{k}_{s}"] = self.obs[key]
        return b

    def instantiate(self, config: FxConfig) -> MarkovModel:
        return self.template.instantiate(self.bindings(config))


@dataclass
class FxApplication:
    registry: Mapping[str, tuple[ServiceSpec, ...]]
    params: WorkflowParams = field(default_factory=WorkflowParams)
    weights: tuple[float, float] = (1.0, 2.0)
    reliability_min: float = 0.9
    time_max: float = 5.0

    name = "fx"
    requirement_ids = ("R1", "R2", "R3")

    def __post_init__(self):
        self.template = build_fx_template(self.params)
        self._configs = enumerate_fx_configs(self.registry)
        self._props = fx_requirements(self.reliability_min, self.time_max)

    @property
    def parameters(self) -> list[str]:
        return list(service_observations(self.registry))

    def initial_observations(self) -> dict[str, float]:
        return service_observations(self.registry)

    def initial_config(self) -> FxConfig:
        first = [self.registry[op][0].id for op in OPERATIONS]
        first[OPERATIONS.index("Order")] = NO_SVC
        return FxConfig(tuple(first))

    def configurations(self) -> list[FxConfig]:
        return self._configs

    def model_factory(self, observations: Mapping[str, float]) -> FxModelFactory:
        return FxModelFactory(self.template, observations)

    def properties(self, config: FxConfig):
        return self._props

    def cost(self, entry: ConfigResult) -> float:
        return fx_cost(entry.value("price"), entry.value("R2"), self.weights)

    def failsafe(self, current: FxConfig) -> FxConfig:
        services = list(current.services)
        services[OPERATIONS.index("Order")] = NO_SVC
        return FxConfig(tuple(services))

    def is_failsafe(self, config: FxConfig) -> bool:
        return config.service("Order") == NO_SVC

    def plan(self, current: FxConfig, target: FxConfig) -> list[ChangeService]:
        return plan_fx(current, target)

    def apply(self, steps: Sequence[ChangeService], config: FxConfig) -> FxConfig:
        return self.canonical(apply_fx(steps, config))

    def canonical(self, config: FxConfig) -> FxConfig:
        """Attach the enumeration index when the configuration has one."""
        for c in self._configs:
            if c.services == config.services:
                return c
        return FxConfig(config.services)

    def config_from_json(self, d: Mapping[str, Any]) -> FxConfig:
        return self.canonical(FxConfig.from_json(d))

    def requirement_text(self) -> dict[str, str]:
        return {
            "R1": f"Workflow executions complete successfully with probability at least {self.reliability_min:g}",
            "R2": f"Expected workflow response time at most {self.time_max:g} s",
            "R3": f"Cost w1*price + w2*time minimised with (w1, w2) = ({self.weights[0]:g}, {self.weights[1]:g})",
            "R4": "If no feasible configuration is found within the analysis deadline, the Order invocation is bypassed",
        }


def load_fx_registry(path: str | Path | None = None) -> dict[str, Any]:
    data = tomli.loads(Path(path or DATA / "fx_services.toml").read_text())
    reg: dict[str, list[ServiceSpec]] = {op: [] for op in OPERATIONS}
    for s in data["services"]:
        spec = ServiceSpec(s["operation"], s["id"], float(s["time"]), float(s["reliability"]), float(s["price"]))
        reg[spec.operation].append(spec)
    out: dict[str, Any] = {"registry": {k: tuple(v) for k, v in reg.items()}}
    if "workflow" in data:
        out["params"] = WorkflowParams(**data["workflow"])
    for k in ("reliability_min", "time_max"):
        if k in data.get("fx", {}):
            out[k] = float(data["fx"][k])
    return out


def make_fx_application(registry: str | Path | None = None, weights: tuple[float, float] | None = None) -> FxApplication:
    kwargs = load_fx_registry(registry)
    if weights is not None:
        kwargs["weights"] = tuple(weights)
    return FxApplication(**kwargs)


# --------------------------------------------------------------------------- simulator


@dataclass(frozen=True)
class FxEvent:
    time: float
    label: str
    values: Mapping[str, float]
    probe: bool = False


@dataclass
class FxScenario:
    events: list[FxEvent]
    weights: tuple[float, float] = (1.0, 2.0)
    deadline: float = 2.0

    def __post_init__(self):
        times = [e.time for e in self.events]
        if times != sorted(times):
            raise ValueError("scenario events must be time-ordered")


def load_fx_scenario(path: str | Path | None = None) -> FxScenario:
    data = tomli.loads(Path(path or DATA / "fx_scenario.toml").read_text())
    return FxScenario(
        events=[FxEvent(float(e["time"]), e["label"], e.get("values", {})) for e in data["events"]],
        weights=tuple(data.get("weights", (1.0, 2.0))),
        deadline=float(data.get("deadline", 2.0)),
    )


class FxSimulator:
    """Logical-clock FX workflow stand-in with swappable service bindings."""

    def __init__(self, scenario: FxScenario, registry: Mapping[str, Sequence[ServiceSpec]], initial: FxConfig, fail_on: Sequence[type] = ()):
        self.scenario = scenario
        self.known = {s.id for impls in registry.values() for s in impls} | {NO_SVC}
        self.bound = dict(zip(OPERATIONS, initial.services))
        self.characteristics = service_observations(registry)
        self.now = 0.0
        self.fail_on = tuple(fail_on)
        self.trace: list[dict[str, Any]] = []
        self._record("start")

    @property
    def config(self) -> FxConfig:
        return FxConfig(tuple(self.bound[op] for op in OPERATIONS))

    def events(self):
        for ev in self.scenario.events:
            self.now = ev.time
            self.characteristics.update(ev.values)
            self._record(f"event {ev.label}")
            yield ev

    def command(self, step: ChangeService) -> None:
        from .mape import EffectorFailure

        if isinstance(step, self.fail_on):
            raise EffectorFailure(step)
        if step.operation not in OPERATIONS:
            raise UnknownService(step.operation)
        if step.implementation not in self.known or (step.implementation == NO_SVC and step.operation != "Order"):
            raise UnknownService(step.implementation)
        self.bound[step.operation] = step.implementation
        self._record(str(step))

    def _record(self, what: str) -> None:
        row: dict[str, Any] = {"time": self.now, "what": what}
        row.update({SHORT[op]: self.bound[op] for op in OPERATIONS})
        self.trace.append(row)
