"""Labelled Markov chains with reward structures, and parametric templates.

A :class:`MarkovModel` is either a DTMC (weights are probabilities) or a CTMC
(weights are rates in 1/s). A :class:`ModelTemplate` has the same shape but
its weights and rewards may be expression strings over declared parameters;
:func:`bind_parameters` evaluates them into a concrete model.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .expr import ExpressionError, evaluate, names_in

__all__ = [
    "ModelKind",
    "RewardStructure",
    "MarkovModel",
    "Violation",
    "validate_model",
    "Parameter",
    "ModelTemplate",
    "bind_parameters",
    "Bound",
    "ProbReach",
    "CumulReward",
    "ReachReward",
    "Property",
    "IndependentSum",
    "build_independent_sum",
    "ModelError",
    "MissingParameter",
    "OutOfRange",
    "InvariantViolation",
]

STOCHASTIC_TOL = 1e-9


class ModelError(Exception):
    pass


class MissingParameter(ModelError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name


class OutOfRange(ModelError):
    def __init__(self, name: str, value: float):
        super().__init__(f"{name}={value!r}")
        self.name = name
        self.value = value


class InvariantViolation(ModelError):
    def __init__(self, violations: Sequence["Violation"]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class ModelKind(str, enum.Enum):
    DTMC = "dtmc"
    CTMC = "ctmc"


@dataclass(frozen=True)
class RewardStructure:
    state_rewards: Mapping[int, float] = field(default_factory=dict)
    transition_rewards: Mapping[tuple[int, int], float] = field(default_factory=dict)

    def state_vector(self, n: int) -> np.ndarray:
        v = np.zeros(n)
        for s, r in self.state_rewards.items():
            v[s] = r
        return v

    @property
    def is_zero(self) -> bool:
        return not any(self.state_rewards.values()) and not any(self.transition_rewards.values())


@dataclass(frozen=True)
class MarkovModel:
    """Sparse labelled Markov chain. Treat instances as immutable."""

    kind: ModelKind
    states: tuple[str, ...]
    transitions: tuple[tuple[int, int, float], ...]
    initial: int = 0
    labels: Mapping[str, frozenset[int]] = field(default_factory=dict)
    rewards: Mapping[str, RewardStructure] = field(default_factory=dict)

    @property
    def n_states(self) -> int:
        return len(self.states)

    def index(self, name: str) -> int:
        return self.states.index(name)

    def label_states(self, label: str) -> frozenset[int]:
        if label not in self.labels:
            raise KeyError(f"unknown label {label!r}")
        return self.labels[label]

    def matrix(self) -> sp.csr_matrix:
        """Weight matrix (probabilities or rates), duplicates summed."""
        n = self.n_states
        if not self.transitions:
            return sp.csr_matrix((n, n))
        src, dst, w = zip(*self.transitions)
        return sp.csr_matrix((np.asarray(w, float), (src, dst)), shape=(n, n))

    def dense(self) -> np.ndarray:
        m = np.zeros((self.n_states, self.n_states))
        for s, t, w in self.transitions:
            m[s, t] += w
        return m

    def successors(self, s: int) -> list[tuple[int, float]]:
        return [(t, w) for a, t, w in self.transitions if a == s]

    def reward(self, name: str) -> RewardStructure:
        try:
            return self.rewards[name]
        except KeyError:
            raise KeyError(f"unknown reward structure {name!r}") from None

    def canonical(self) -> str:
        lines = [f"kind {self.kind.value}", f"initial {self.initial}"]
        lines += [f"state {i} {s}" for i, s in enumerate(self.states)]
        lines += [f"tr {s} {t} {w!r}" for s, t, w in sorted(self.transitions)]
        for lab in sorted(self.labels):
            lines.append(f"label {lab} {sorted(self.labels[lab])}")
        for name in sorted(self.rewards):
            rs = self.rewards[name]
            lines += [f"rs {name} {s} {r!r}" for s, r in sorted(rs.state_rewards.items())]
            lines += [f"rt {name} {k[0]} {k[1]} {r!r}" for k, r in sorted(rs.transition_rewards.items())]
        return "\n".join(lines)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Violation:
    kind: str
    where: str
    detail: str
    amount: float | None = None

    def __str__(self) -> str:
        return f"{self.kind} at {self.where}: {self.detail}"


def validate_model(model: MarkovModel) -> list[Violation]:
    """Report every invariant violation; an empty list means the model is valid."""
    out: list[Violation] = []
    n = model.n_states
    if len(set(model.states)) != n:
        out.append(Violation("duplicate-state", "states", "state names are not unique"))
    if not 0 <= model.initial < n:
        out.append(Violation("bad-initial", "initial", f"initial index {model.initial} out of range"))
    rows: dict[int, list[tuple[int, float]]] = {}
    for s, t, w in model.transitions:
        where = f"{_name(model, s)}->{_name(model, t)}"
        if not (0 <= s < n and 0 <= t < n):
            out.append(Violation("dangling-transition", where, "references a missing state"))
            continue
        if not math.isfinite(w):
            out.append(Violation("non-finite-weight", where, f"weight {w!r}"))
            continue
        if model.kind is ModelKind.CTMC:
            if w <= 0:
                out.append(Violation("non-positive-rate", where, f"rate {w!r}", w))
            if s == t:
                out.append(Violation("self-loop-rate", where, "CTMC self-loops are not allowed"))
        elif w < 0 or w > 1 + STOCHASTIC_TOL:
            out.append(Violation("bad-probability", where, f"probability {w!r}", w))
        rows.setdefault(s, []).append((t, w))
    if model.kind is ModelKind.DTMC:
        for s in range(n):
            total = sum(w for _, w in rows.get(s, []))
            if s not in rows:
                continue
            if abs(total - 1.0) > STOCHASTIC_TOL:
                out.append(
                    Violation("row-sum", model.states[s], f"outgoing probabilities sum to {total:.12g}", 1.0 - total)
                )
    for label, members in model.labels.items():
        if not members:
            out.append(Violation("empty-label", label, "label names no state"))
        for s in members:
            if not 0 <= s < n:
                out.append(Violation("dangling-label", label, f"state index {s} does not exist"))
    for name, rs in model.rewards.items():
        for s, r in rs.state_rewards.items():
            if not 0 <= s < n:
                out.append(Violation("dangling-reward", f"{name}@{s}", "state does not exist"))
            elif not (math.isfinite(r) and r >= 0):
                out.append(Violation("bad-reward", f"{name}@{_name(model, s)}", f"value {r!r}", r))
        for (s, t), r in rs.transition_rewards.items():
            if not (0 <= s < n and 0 <= t < n):
                out.append(Violation("dangling-reward", f"{name}@{s}->{t}", "state does not exist"))
            elif not (math.isfinite(r) and r >= 0):
                out.append(Violation("bad-reward", f"{name}@{_name(model, s)}->{_name(model, t)}", f"value {r!r}", r))
    return out


def _name(model: MarkovModel, s: int) -> str:
    return model.states[s] if 0 <= s < model.n_states else f"#{s}"


# --------------------------------------------------------------------------- templates

Weight = Union[float, str]


@dataclass(frozen=True)
class Parameter:
    name: str
    unit: str = ""
    low: float = -math.inf
    high: float = math.inf
    low_open: bool = False

    def contains(self, value: float) -> bool:
        if not math.isfinite(value):
            return False
        if self.low_open:
            return self.low < value <= self.high
        return self.low <= value <= self.high


@dataclass(frozen=True)
class ModelTemplate:
    """Markov model skeleton whose weights/rewards may be expressions.

    Transitions whose weight evaluates to exactly 0 are dropped at bind
    time, so state indices stay stable while structural zeros vanish.
    """

    kind: ModelKind
    states: tuple[str, ...]
    transitions: tuple[tuple[int, int, Weight], ...]
    initial: int = 0
    labels: Mapping[str, frozenset[int]] = field(default_factory=dict)
    state_rewards: Mapping[str, Mapping[int, Weight]] = field(default_factory=dict)
    transition_rewards: Mapping[str, Mapping[tuple[int, int], Weight]] = field(default_factory=dict)
    parameters: tuple[Parameter, ...] = ()

    def __post_init__(self):
        declared = {p.name for p in self.parameters}
        for expr in self._expressions():
            undeclared = names_in(expr) - declared
            if undeclared:
                raise ModelError(f"expression {expr!r} references undeclared {sorted(undeclared)}")

    def _expressions(self) -> Iterable[str]:
        for _, _, w in self.transitions:
            if isinstance(w, str):
                yield w
        for table in (*self.state_rewards.values(), *self.transition_rewards.values()):
            for w in table.values():
                if isinstance(w, str):
                    yield w

    @property
    def reward_names(self) -> list[str]:
        return sorted(set(self.state_rewards) | set(self.transition_rewards))

    def parameter(self, name: str) -> Parameter:
        for p in self.parameters:
            if p.name == name:
                return p
        raise KeyError(name)

    def instantiate(self, bindings: Mapping[str, float]) -> MarkovModel:
        return bind_parameters(self, bindings)

    @classmethod
    def from_model(cls, model: MarkovModel) -> "ModelTemplate":
        return cls(
            kind=model.kind,
            states=model.states,
            transitions=model.transitions,
            initial=model.initial,
            labels=dict(model.labels),
            state_rewards={k: dict(v.state_rewards) for k, v in model.rewards.items()},
            transition_rewards={k: dict(v.transition_rewards) for k, v in model.rewards.items()},
        )


def bind_parameters(template: ModelTemplate, bindings: Mapping[str, float]) -> MarkovModel:
    env: dict[str, float] = {}
    for p in template.parameters:
        if p.name not in bindings:
            raise MissingParameter(p.name)
        value = float(bindings[p.name])
        if not p.contains(value):
            raise OutOfRange(p.name, value)
        env[p.name] = value

    def ev(w: Weight) -> float:
        try:
            return float(evaluate(w, env))
        except ExpressionError as exc:
            raise ModelError(str(exc)) from None

    transitions = []
    for s, t, w in template.transitions:
        value = ev(w)
        if value != 0.0:
            transitions.append((s, t, value))
    rewards = {}
    for name in template.reward_names:
        rewards[name] = RewardStructure(
            state_rewards={s: ev(w) for s, w in template.state_rewards.get(name, {}).items()},
            transition_rewards={k: ev(w) for k, w in template.transition_rewards.get(name, {}).items()},
        )
    model = MarkovModel(
        kind=template.kind,
        states=template.states,
        transitions=tuple(transitions),
        initial=template.initial,
        labels=dict(template.labels),
        rewards=rewards,
    )
    problems = validate_model(model)
    if problems:
        raise InvariantViolation(problems)
    return model


# --------------------------------------------------------------------------- properties


class Bound(str, enum.Enum):
    GE = ">="
    LE = "<="
    QUERY = "=?"

    def holds(self, value: float, threshold: float | None) -> bool | None:
        # inclusive comparisons: boundary values satisfy the bound
        if self is Bound.GE:
            return bool(value >= threshold)
        if self is Bound.LE:
            return bool(value <= threshold)
        return None


def _check_threshold(prop) -> None:
    if prop.bound is not Bound.QUERY and (prop.threshold is None or not math.isfinite(prop.threshold)):
        raise ValueError(f"bounded property needs a finite threshold: {prop!r}")


@dataclass(frozen=True)
class ProbReach:
    """P bound [F target] on a DTMC."""

    bound: Bound
    threshold: float | None
    target_label: str
    name: str = ""

    def __post_init__(self):
        _check_threshold(self)


@dataclass(frozen=True)
class CumulReward:
    """R{reward} bound [C<=horizon] on a CTMC."""

    reward_name: str
    bound: Bound
    threshold: float | None
    horizon: float
    name: str = ""

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        _check_threshold(self)


@dataclass(frozen=True)
class ReachReward:
    """R{reward} bound [F target] on a DTMC."""

    reward_name: str
    bound: Bound
    threshold: float | None
    target_label: str
    name: str = ""

    def __post_init__(self):
        _check_threshold(self)


Property = Union[ProbReach, CumulReward, ReachReward]


# --------------------------------------------------------------------------- independent composition


@dataclass(frozen=True)
class IndependentSum:
    """Handle for a parallel composition of non-synchronising CTMCs.

    Expected cumulative rewards of the product equal the sum of the
    per-component values; ``offsets`` adds constant per-reward terms
    (e.g. one-off switching energy) on top.
    """

    models: tuple[MarkovModel, ...]
    reward_name: str = ""
    offsets: Mapping[str, float] = field(default_factory=dict)

    kind = ModelKind.CTMC

    def cumulative_reward(self, horizon: float, reward_name: str | None = None, **kwargs) -> float:
        from .verifier import ctmc_cumulative_reward

        name = reward_name or self.reward_name
        total = sum(ctmc_cumulative_reward(m, name, horizon, **kwargs) for m in self.models)
        return total + self.offsets.get(name, 0.0)

    def digest(self) -> str:
        h = hashlib.sha256()
        for m in self.models:
            h.update(m.digest().encode())
        for k in sorted(self.offsets):
            h.update(f"{k}={self.offsets[k]!r}".encode())
        return h.hexdigest()[:16]


def build_independent_sum(
    models: Sequence[MarkovModel], reward_name: str = "", offsets: Mapping[str, float] | None = None
) -> IndependentSum:
    for m in models:
        if m.kind is not ModelKind.CTMC:
            raise ModelError("independent sums are defined for CTMC components")
    return IndependentSum(tuple(models), reward_name, dict(offsets or {}))
