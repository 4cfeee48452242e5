"""Text format for models and templates (TOML).

Layout::

    kind = "dtmc"            # or "ctmc"
    initial = "start"

    [parameters.p_MW]        # optional; omitted bounds are unbounded
    unit = "probability"
    low = 0.0
    high = 1.0

    [states]                 # state name -> list of labels, in index order
    start = []
    done = ["done", "end"]

    [[transitions]]
    from = "start"
    to = "done"
    weight = "p_MW"          # number or expression

    [rewards.time.states]
    start = "time_MW"

    [[rewards.time.transitions]]
    from = "start"
    to = "done"
    value = 0.5
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any

import tomli
import tomli_w

from .models import MarkovModel, ModelError, ModelKind, ModelTemplate, Parameter, bind_parameters

__all__ = ["parse_template", "dump_template", "parse_model", "dump_model", "read_template", "read_model"]


def parse_template(text: str) -> ModelTemplate:
    data = tomli.loads(text)
    return template_from_dict(data)


def template_from_dict(data: dict[str, Any]) -> ModelTemplate:
    try:
        kind = ModelKind(data["kind"])
        state_table = data["states"]
    except KeyError as exc:
        raise ModelError(f"missing section {exc}") from None
    states = tuple(state_table)
    idx = {s: i for i, s in enumerate(states)}

    def ref(name: str) -> int:
        if name not in idx:
            raise ModelError(f"unknown state {name!r}")
        return idx[name]

    labels: dict[str, set[int]] = {}
    for s, labs in state_table.items():
        for lab in labs:
            labels.setdefault(lab, set()).add(idx[s])
    transitions = tuple((ref(t["from"]), ref(t["to"]), t["weight"]) for t in data.get("transitions", []))
    state_rewards, transition_rewards = {}, {}
    for name, rs in data.get("rewards", {}).items():
        state_rewards[name] = {ref(s): v for s, v in rs.get("states", {}).items()}
        transition_rewards[name] = {(ref(t["from"]), ref(t["to"])): t["value"] for t in rs.get("transitions", [])}
    params = tuple(
        Parameter(
            name,
            spec.get("unit", ""),
            spec.get("low", -math.inf),
            spec.get("high", math.inf),
            spec.get("low_open", False),
        )
        for name, spec in data.get("parameters", {}).items()
    )
    return ModelTemplate(
        kind=kind,
        states=states,
        transitions=transitions,
        initial=ref(data.get("initial", states[0])),
        labels={k: frozenset(v) for k, v in labels.items()},
        state_rewards=state_rewards,
        transition_rewards=transition_rewards,
        parameters=params,
    )


def template_to_dict(t: ModelTemplate) -> dict[str, Any]:
    out: dict[str, Any] = {"kind": t.kind.value, "initial": t.states[t.initial]}
    if t.parameters:
        params = {}
        for p in t.parameters:
            spec: dict[str, Any] = {"unit": p.unit}
            if math.isfinite(p.low):
                spec["low"] = p.low
            if math.isfinite(p.high):
                spec["high"] = p.high
            if p.low_open:
                spec["low_open"] = True
            params[p.name] = spec
        out["parameters"] = params
    out["states"] = {s: sorted(lab for lab, members in t.labels.items() if i in members) for i, s in enumerate(t.states)}
    out["transitions"] = [{"from": t.states[a], "to": t.states[b], "weight": w} for a, b, w in t.transitions]
    rewards = {}
    for name in t.reward_names:
        entry: dict[str, Any] = {}
        sr = t.state_rewards.get(name, {})
        if sr:
            entry["states"] = {t.states[s]: v for s, v in sorted(sr.items())}
        tr = t.transition_rewards.get(name, {})
        if tr:
            entry["transitions"] = [{"from": t.states[a], "to": t.states[b], "value": v} for (a, b), v in sorted(tr.items())]
        rewards[name] = entry
    if rewards:
        out["rewards"] = rewards
    return out


def dump_template(t: ModelTemplate) -> str:
    return tomli_w.dumps(template_to_dict(t))


def parse_model(text: str) -> MarkovModel:
    """Parse a concrete model (a template without parameters)."""
    t = parse_template(text)
    if t.parameters:
        raise ModelError("model file declares parameters; load it as a template")
    return bind_parameters(t, {})


def dump_model(m: MarkovModel) -> str:
    return dump_template(ModelTemplate.from_model(m))


def read_template(path: str | Path) -> ModelTemplate:
    return parse_template(Path(path).read_text())


def read_model(path: str | Path) -> MarkovModel:
    return parse_model(Path(path).read_text())
