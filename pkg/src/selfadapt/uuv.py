"""UUV case study: sensor CTMCs, configuration space, requirements and simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import tomli

from .models import (
    Bound,
    CumulReward,
    IndependentSum,
    MarkovModel,
    ModelKind,
    ModelTemplate,
    Parameter,
    RewardStructure,
    build_independent_sum,
)
from .verifier import ConfigResult

DATA = Path(__file__).parent / "data"

__all__ = [
    "SensorSpec",
    "UuvConfig",
    "SensorOn",
    "SensorOff",
    "SetSpeed",
    "ZeroSpeedHorizon",
    "CommandOnUnknownSensor",
    "build_sensor_template",
    "explicit_switching_model",
    "default_speed_grid",
    "enumerate_uuv_configs",
    "uuv_requirements",
    "uuv_cost",
    "UuvApplication",
    "UuvModelFactory",
    "make_uuv_application",
    "plan_uuv",
    "apply_uuv",
    "ScenarioEvent",
    "UuvScenario",
    "UuvSimulator",
    "load_sensor_registry",
    "load_uuv_scenario",
]


class ZeroSpeedHorizon(ValueError):
    pass


class CommandOnUnknownSensor(KeyError):
    pass


@dataclass(frozen=True)
class SensorSpec:
    name: str
    r: float
    e: float
    e_on: float
    e_off: float
    p_max: float = 1.0
    kappa: float = 0.0

    def __post_init__(self):
        for k in ("r", "e", "e_on", "e_off", "kappa"):
            if not getattr(self, k) >= 0:
                raise ValueError(f"{self.name}: {k} must be >= 0")
        if not 0 < self.p_max <= 1:
            raise ValueError(f"{self.name}: p_max must be in (0, 1]")

    def accuracy(self, sp: float) -> float:
        return min(1.0, max(0.0, self.p_max - self.kappa * sp))

    def accuracy_expr(self) -> str:
        return f"clamp({self.p_max!r} - {self.kappa!r} * sp, 0, 1)"


# --------------------------------------------------------------------------- sensor CTMC

# "on" is entered once switching has completed. Accurate/inaccurate outcomes
# alternate between two copies so that repeated outcomes never form self-loops.
SENSOR_STATES = ("on", "acc_a", "acc_b", "inacc_a", "inacc_b")


def _sensor_edges() -> list[tuple[int, int, bool]]:
    idx = {s: i for i, s in enumerate(SENSOR_STATES)}
    edges = []
    for s in SENSOR_STATES:
        acc = "acc_b" if s == "acc_a" else "acc_a"
        inacc = "inacc_b" if s == "inacc_a" else "inacc_a"
        edges.append((idx[s], idx[acc], True))
        edges.append((idx[s], idx[inacc], False))
    return edges


def build_sensor_template(spec: SensorSpec) -> ModelTemplate:
    """CTMC template of one switched-on sensor, free in ``r`` (1/s) and ``sp`` (m/s).

    Every state measures at rate ``r``; a measurement is accurate with
    probability ``p(sp)``. Reward "measure" counts accurate measurements and
    "energy" charges ``e`` per measurement.
    """
    p = spec.accuracy_expr()
    transitions, measure, energy = [], {}, {}
    for s, t, accurate in _sensor_edges():
        transitions.append((s, t, f"r * {p}" if accurate else f"r * (1 - {p})"))
        energy[(s, t)] = spec.e
        if accurate:
            measure[(s, t)] = 1.0
    return ModelTemplate(
        kind=ModelKind.CTMC,
        states=SENSOR_STATES,
        transitions=tuple(transitions),
        initial=0,
        labels={"accurate": frozenset({1, 2}), "inaccurate": frozenset({3, 4})},
        state_rewards={},
        transition_rewards={"measure": measure, "energy": energy},
        parameters=(
            Parameter("r", "1/s", 0.0, math.inf, low_open=True),
            Parameter("sp", "m/s", 0.0, math.inf),
        ),
    )


def explicit_switching_model(spec: SensorSpec, r: float, sp: float, switch_on: bool, switch_rate: float) -> MarkovModel:
    """Sensor CTMC with an explicit switching state in front of it.

    Used to validate the scalar switching-energy offset: as ``switch_rate``
    grows, expected energy tends to the offset plus the steady measuring cost.
    A sensor switched off goes to an absorbing "off" state after paying e_off.
    """
    base = build_sensor_template(spec).instantiate({"r": r, "sp": sp})
    shift = 1
    states = ("switch", *base.states, "off")
    transitions = [(s + shift, t + shift, w) for s, t, w in base.transitions]
    rewards = {}
    for name, rs in base.rewards.items():
        rewards[name] = {(s + shift, t + shift): v for (s, t), v in rs.transition_rewards.items()}
    off = len(states) - 1
    if switch_on:
        transitions.append((0, 1, switch_rate))
        rewards["energy"][(0, 1)] = spec.e_on
    else:
        transitions.append((0, off, switch_rate))
        rewards["energy"][(0, off)] = spec.e_off
    return MarkovModel(
        kind=ModelKind.CTMC,
        states=states,
        transitions=tuple(transitions),
        initial=0,
        labels={k: frozenset(i + shift for i in v) for k, v in base.labels.items()},
        rewards={k: RewardStructure({}, v) for k, v in rewards.items()},
    )


# --------------------------------------------------------------------------- configurations


@dataclass(frozen=True, order=True)
class UuvConfig:
    sensors: tuple[int, ...]
    speed: float

    def __post_init__(self):
        if any(x not in (0, 1) for x in self.sensors):
            raise ValueError("sensor switches must be 0 or 1")
        if self.speed < 0:
            raise ValueError("speed must be >= 0")
        if self.speed > 0 and not any(self.sensors):
            raise ValueError("a moving UUV needs at least one sensor on")

    def __str__(self) -> str:
        return "(" + ", ".join([*map(str, self.sensors), _fmt_speed(self.speed)]) + ")"

    def as_row(self) -> dict[str, Any]:
        row: dict[str, Any] = {f"x{i + 1}": x for i, x in enumerate(self.sensors)}
        row["sp"] = self.speed
        return row

    def to_json(self) -> dict[str, Any]:
        return {"sensors": list(self.sensors), "speed": self.speed}

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "UuvConfig":
        return cls(tuple(d["sensors"]), float(d["speed"]))


def _fmt_speed(v: float) -> str:
    return repr(round(v, 6))


def default_speed_grid(low: float = 1.0, high: float = 5.0, count: int = 21) -> tuple[float, ...]:
    return tuple(round(float(v), 6) for v in np.linspace(low, high, count))


def enumerate_uuv_configs(n: int, speed_grid: Sequence[float]) -> list[UuvConfig]:
    """All non-empty sensor subsets times all speeds: bitmask ascending, then speed.

    Sensor 1 is the most significant bit, so mask 0b011 is (0, 1, 1).
    """
    if n < 1 or not speed_grid:
        raise ValueError("need n >= 1 and a non-empty speed grid")
    out = []
    for mask in range(1, 2**n):
        bits = tuple((mask >> (n - 1 - i)) & 1 for i in range(n))
        out += [UuvConfig(bits, float(sp)) for sp in sorted(speed_grid)]
    return out


# --------------------------------------------------------------------------- steps


@dataclass(frozen=True)
class SensorOn:
    sensor: int  # 1-based

    def __str__(self) -> str:
        return f"SensorOn({self.sensor})"


@dataclass(frozen=True)
class SensorOff:
    sensor: int

    def __str__(self) -> str:
        return f"SensorOff({self.sensor})"


@dataclass(frozen=True)
class SetSpeed:
    speed: float

    def __str__(self) -> str:
        return f"SetSpeed({_fmt_speed(self.speed)})"


def plan_uuv(current: UuvConfig, target: UuvConfig) -> list:
    on = [SensorOn(i + 1) for i, (a, b) in enumerate(zip(current.sensors, target.sensors)) if b and not a]
    off = [SensorOff(i + 1) for i, (a, b) in enumerate(zip(current.sensors, target.sensors)) if a and not b]
    speed = [SetSpeed(target.speed)] if target.speed != current.speed else []
    return on + off + speed


def apply_uuv(steps: Sequence, config: UuvConfig) -> UuvConfig:
    sensors, speed = list(config.sensors), config.speed
    for s in steps:
        if isinstance(s, SensorOn):
            sensors[s.sensor - 1] = 1
        elif isinstance(s, SensorOff):
            sensors[s.sensor - 1] = 0
        elif isinstance(s, SetSpeed):
            speed = s.speed
        else:
            raise TypeError(f"not a UUV step: {s!r}")
    return UuvConfig(tuple(sensors), speed)


# --------------------------------------------------------------------------- requirements


def uuv_requirements(
    config: UuvConfig, window: float = 10.0, measure_min: float = 20.0, energy_max: float = 120.0
) -> tuple[CumulReward, CumulReward]:
    """R1 (measurements) and R2 (energy) over the time needed to cover ``window`` metres."""
    if config.speed <= 0:
        raise ZeroSpeedHorizon("R1/R2 horizons need sp > 0")
    horizon = window / config.speed
    return (
        CumulReward("measure", Bound.GE, measure_min, horizon, name="R1"),
        CumulReward("energy", Bound.LE, energy_max, horizon, name="R2"),
    )


def uuv_cost(energy: float, speed: float, weights: tuple[float, float]) -> float:
    w1, w2 = weights
    return w1 * energy + w2 / speed


class UuvModelFactory:
    """Binds the per-sensor templates for a fixed set of observed rates."""

    def __init__(self, templates: Sequence[ModelTemplate], specs: Sequence[SensorSpec], rates: Sequence[float]):
        self.templates = list(templates)
        self.specs = list(specs)
        self.rates = list(rates)
        self._cache: dict[tuple[int, float], MarkovModel] = {}

    def sensor_model(self, i: int, speed: float) -> MarkovModel:
        key = (i, speed)
        if key not in self._cache:
            self._cache[key] = self.templates[i].instantiate({"r": self.rates[i], "sp": speed})
        return self._cache[key]

    def instantiate(self, config: UuvConfig) -> IndependentSum:
        models = [self.sensor_model(i, config.speed) for i, x in enumerate(config.sensors) if x]
        switching = sum(s.e_on if x else s.e_off for s, x in zip(self.specs, config.sensors))
        return build_independent_sum(models, "energy", {"energy": switching})


# --------------------------------------------------------------------------- application


@dataclass
class UuvApplication:
    """Everything the controller needs to know about the UUV."""

    specs: tuple[SensorSpec, ...]
    speed_grid: tuple[float, ...] = field(default_factory=default_speed_grid)
    weights: tuple[float, float] = (1.0, 200.0)
    window: float = 10.0
    measure_min: float = 20.0
    energy_max: float = 120.0
    speed_max: float = 5.0

    name = "uuv"
    requirement_ids = ("R1", "R2", "R3")

    def __post_init__(self):
        self.templates = [build_sensor_template(s) for s in self.specs]
        self._configs = enumerate_uuv_configs(len(self.specs), self.speed_grid)

    @property
    def parameters(self) -> list[str]:
        return [f"r{i + 1}" for i in range(len(self.specs))]

    def initial_observations(self) -> dict[str, float]:
        return {f"r{i + 1}": s.r for i, s in enumerate(self.specs)}

    def initial_config(self) -> UuvConfig:
        return UuvConfig((0,) * len(self.specs), 0.0)

    def configurations(self) -> list[UuvConfig]:
        return self._configs

    def model_factory(self, observations: Mapping[str, float]) -> UuvModelFactory:
        rates = [observations[p] for p in self.parameters]
        return UuvModelFactory(self.templates, self.specs, rates)

    def properties(self, config: UuvConfig):
        return uuv_requirements(config, self.window, self.measure_min, self.energy_max)

    def cost(self, entry: ConfigResult) -> float:
        return uuv_cost(entry.value("R2"), entry.config.speed, self.weights)

    def failsafe(self, current: UuvConfig) -> UuvConfig:
        return UuvConfig(current.sensors, 0.0)

    def is_failsafe(self, config: UuvConfig) -> bool:
        return config.speed == 0.0

    def plan(self, current: UuvConfig, target: UuvConfig) -> list:
        return plan_uuv(current, target)

    def apply(self, steps: Sequence, config: UuvConfig) -> UuvConfig:
        return apply_uuv(steps, config)

    def config_from_json(self, d: Mapping[str, Any]) -> UuvConfig:
        return UuvConfig.from_json(d)

    def requirement_text(self) -> dict[str, str]:
        return {
            "R1": f"At least {self.measure_min:g} accurate measurements per {self.window:g} m",
            "R2": f"At most {self.energy_max:g} J used by the sensors per {self.window:g} m",
            "R3": f"Cost w1*E + w2/sp minimised with (w1, w2) = ({self.weights[0]:g}, {self.weights[1]:g})",
            "R4": "If no feasible configuration is found within the analysis deadline, speed is reduced to 0 m/s",
        }


def load_sensor_registry(path: str | Path | None = None) -> dict[str, Any]:
    data = tomli.loads(Path(path or DATA / "uuv_sensors.toml").read_text())
    specs = tuple(SensorSpec(**s) for s in data["sensors"])
    return {"specs": specs, **data.get("uuv", {})}


def make_uuv_application(registry: str | Path | None = None, weights: tuple[float, float] | None = None) -> UuvApplication:
    reg = load_sensor_registry(registry)
    grid = reg.get("speed_grid", {})
    kwargs = dict(
        specs=reg["specs"],
        speed_grid=default_speed_grid(grid.get("low", 1.0), grid.get("high", 5.0), grid.get("count", 21)),
        window=reg.get("window", 10.0),
        measure_min=reg.get("measure_min", 20.0),
        energy_max=reg.get("energy_max", 120.0),
        speed_max=reg.get("speed_max", 5.0),
    )
    if weights is not None:
        kwargs["weights"] = tuple(weights)
    return UuvApplication(**kwargs)


# --------------------------------------------------------------------------- simulator


@dataclass(frozen=True)
class ScenarioEvent:
    time: float
    label: str
    values: Mapping[str, float]
    probe: bool = False


@dataclass
class UuvScenario:
    events: list[ScenarioEvent]
    weights: tuple[float, float] = (1.0, 200.0)
    deadline: float = 2.0
    probe_period: float = 100.0
    probe_duration: float = 5.0
    end_time: float | None = None

    def __post_init__(self):
        times = [e.time for e in self.events]
        if times != sorted(times):
            raise ValueError("scenario events must be time-ordered")


def load_uuv_scenario(path: str | Path | None = None) -> UuvScenario:
    data = tomli.loads(Path(path or DATA / "uuv_scenario.toml").read_text())
    probe = data.get("probe", {})
    return UuvScenario(
        events=[ScenarioEvent(float(e["time"]), e["label"], e.get("values", {}), e.get("probe", False)) for e in data["events"]],
        weights=tuple(data.get("weights", (1.0, 200.0))),
        deadline=float(data.get("deadline", 2.0)),
        probe_period=float(probe.get("period", 100.0)),
        probe_duration=float(probe.get("duration", 5.0)),
        end_time=data.get("end_time"),
    )


class UuvSimulator:
    """Logical-clock UUV stand-in: emits rate events and obeys sensor/speed commands.

    Off sensors are probed periodically (``probe_period`` seconds after they
    were switched off, for ``probe_duration`` seconds); probe windows appear
    in the ground-truth trace.
    """

    def __init__(self, scenario: UuvScenario, n_sensors: int, fail_on: Sequence[type] = ()):
        self.scenario = scenario
        self.n = n_sensors
        self.sensors = [0] * n_sensors
        self.speed = 0.0
        self.rates: dict[str, float] = {}
        self.now = 0.0
        self.fail_on = tuple(fail_on)
        self.trace: list[dict[str, Any]] = []
        self._off_since: dict[int, float] = {}
        self._record("start")

    @property
    def config(self) -> UuvConfig:
        return UuvConfig(tuple(self.sensors), self.speed)

    def events(self):
        """Yield scenario events in order, advancing the logical clock."""
        for ev in self.scenario.events:
            self.now = ev.time
            self.rates.update(ev.values)
            self._record(f"event {ev.label}")
            yield ev

    def command(self, step) -> None:
        from .mape import EffectorFailure

        if isinstance(step, self.fail_on):
            raise EffectorFailure(step)
        if isinstance(step, (SensorOn, SensorOff)):
            if not 1 <= step.sensor <= self.n:
                raise CommandOnUnknownSensor(step.sensor)
            i = step.sensor - 1
            self.sensors[i] = 1 if isinstance(step, SensorOn) else 0
            if isinstance(step, SensorOff):
                self._off_since[i] = self.now
            else:
                self._off_since.pop(i, None)
        elif isinstance(step, SetSpeed):
            self.speed = step.speed
        else:
            raise TypeError(f"unsupported command {step!r}")
        self._record(str(step))

    def _record(self, what: str) -> None:
        row: dict[str, Any] = {"time": self.now, "what": what, "speed": self.speed}
        for i in range(self.n):
            row[f"x{i + 1}"] = self.sensors[i]
        self.trace.append(row)

    def probe_windows(self, until: float | None = None) -> list[tuple[int, float, float]]:
        """(sensor, start, end) probe windows, computed from the on/off history."""
        end = until if until is not None else (self.scenario.end_time or self.now)
        out = []
        off_at: dict[int, float] = {}
        for row in self.trace:
            for i in range(self.n):
                x = row[f"x{i + 1}"]
                if not x and i not in off_at and row["what"] == f"SensorOff({i + 1})":
                    off_at[i] = row["time"]
                if x and i in off_at:
                    out += self._windows(i, off_at.pop(i), row["time"])
        for i, t0 in off_at.items():
            out += self._windows(i, t0, end)
        return sorted(out, key=lambda w: (w[1], w[0]))

    def _windows(self, i: int, t0: float, t1: float) -> list[tuple[int, float, float]]:
        p, d = self.scenario.probe_period, self.scenario.probe_duration
        ws, t = [], t0 + p
        while t < t1:
            ws.append((i + 1, t, min(t + d, t1)))
            t += p
        return ws
