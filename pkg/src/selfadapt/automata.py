"""Explicit-state exploration of automata networks with handshake channels.

Semantics: an internal edge fires alone; a ``ch!`` edge fires together with
a ``ch?`` edge of a different automaton, the sender's action first. Guards
are evaluated on the pre-state. Clocks are not modelled.
"""

from __future__ import annotations

import copy
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import tomli

from .expr import ExpressionError, compile_actions, compile_expr, names_in

__all__ = [
    "Location",
    "Edge",
    "Automaton",
    "Variable",
    "Network",
    "StateGraph",
    "Trace",
    "DeadlockFree",
    "LeadsTo",
    "Invariant",
    "CheckResult",
    "UnmatchedChannel",
    "StateSpaceExceeded",
    "RangeViolation",
    "compose_and_explore",
    "check",
    "replay",
    "network_from_dict",
    "load_network",
    "dead_channels",
    "mutate",
]

DEFAULT_STATE_CAP = 10_000_000


class UnmatchedChannel(ValueError):
    pass


class StateSpaceExceeded(RuntimeError):
    pass


class RangeViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class Location:
    name: str
    labels: frozenset[str] = frozenset()
    terminal: bool = False  # a state whose automata are all terminal may have no successors


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    guard: str = ""
    action: str = ""
    sync: str = ""  # "ch!", "ch?" or ""

    @property
    def channel(self) -> str | None:
        return self.sync[:-1] if self.sync else None

    @property
    def sends(self) -> bool:
        return self.sync.endswith("!")

    @property
    def receives(self) -> bool:
        return self.sync.endswith("?")

    def __str__(self) -> str:
        parts = [f"{self.source} -> {self.target}"]
        if self.sync:
            parts.append(self.sync)
        if self.guard:
            parts.append(f"[{self.guard}]")
        if self.action:
            parts.append(f"{{{self.action}}}")
        return " ".join(parts)


@dataclass(frozen=True)
class Automaton:
    name: str
    locations: tuple[Location, ...]
    initial: str
    edges: tuple[Edge, ...]

    def location(self, name: str) -> Location:
        for loc in self.locations:
            if loc.name == name:
                return loc
        raise KeyError(f"{self.name} has no location {name!r}")


@dataclass(frozen=True)
class Variable:
    name: str
    low: int
    high: int
    init: int = 0


@dataclass(frozen=True)
class Network:
    automata: tuple[Automaton, ...]
    variables: tuple[Variable, ...]
    channels: tuple[str, ...] = ()
    queries: Mapping[str, Mapping[str, str]] = field(default_factory=dict)
    name: str = ""
    config_differs: str = ""  # predicate "current config != new config", used by P9


# --------------------------------------------------------------------------- predicates


class _At:
    """``Auto.Label`` in predicates: true iff the automaton's location carries the label."""

    __slots__ = ("_auto", "_labels", "_known")

    def __init__(self, auto: str, labels: frozenset[str], known: frozenset[str]):
        self._auto, self._labels, self._known = auto, labels, known

    def __getattr__(self, name: str) -> bool:
        if name not in self._known:
            raise ExpressionError(f"{self._auto} has no location or label {name!r}")
        return name in self._labels


class _Compiled:
    def __init__(self, net: Network):
        self.net = net
        self.var_names = [v.name for v in net.variables]
        self.var_index = {v: i for i, v in enumerate(self.var_names)}
        self.loc_index = [{loc.name: i for i, loc in enumerate(a.locations)} for a in net.automata]
        self.loc_labels = [[loc.labels | {loc.name} for loc in a.locations] for a in net.automata]
        self.known_labels = [frozenset().union(*ls) if ls else frozenset() for ls in self.loc_labels]
        self.terminal = [[loc.terminal for loc in a.locations] for a in net.automata]
        declared = set(self.var_names)
        self.edges: list[list[tuple[int, int, Any, Any, Edge]]] = []
        for a in net.automata:
            rows = []
            for e in a.edges:
                for src in (e.guard, *(rhs for _, rhs, _ in compile_actions(e.action))):
                    if src and names_in(src) - declared - {"True", "False"}:
                        raise ExpressionError(f"{a.name}: {src!r} uses undeclared {sorted(names_in(src) - declared)}")
                for tgt, _, _ in compile_actions(e.action):
                    if tgt not in declared:
                        raise ExpressionError(f"{a.name}: assignment to undeclared variable {tgt!r}")
                guard = compile_expr(e.guard) if e.guard else None
                actions = [(self.var_index[t], fn) for t, _, fn in compile_actions(e.action)]
                li = self.loc_index[len(self.edges)]
                if e.source not in li or e.target not in li:
                    raise KeyError(f"{a.name}: edge {e} uses an unknown location")
                rows.append((li[e.source], li[e.target], guard, actions, e))
            self.edges.append(rows)
        self.ranges = [(v.low, v.high) for v in net.variables]

    def env(self, vals: Sequence[int]) -> dict[str, Any]:
        return dict(zip(self.var_names, vals))

    def pred_env(self, state: "State") -> dict[str, Any]:
        locs, vals = state
        env: dict[str, Any] = dict(zip(self.var_names, vals))
        for ai, a in enumerate(self.net.automata):
            env[a.name] = _At(a.name, self.loc_labels[ai][locs[ai]], self.known_labels[ai])
        return env

    def apply(self, vals: list[int], actions, where: str) -> None:
        env = dict(zip(self.var_names, vals))
        for vi, fn in actions:
            value = int(fn(env))
            lo, hi = self.ranges[vi]
            if not lo <= value <= hi:
                raise RangeViolation(f"{where}: {self.var_names[vi]}={value} outside [{lo}, {hi}]")
            env[self.var_names[vi]] = value
            vals[vi] = value


State = tuple  # (locations tuple, values tuple)
Move = tuple  # ((automaton, edge), (automaton, edge) | None)


def _check_channels(net: Network) -> None:
    senders: dict[str, int] = {}
    receivers: dict[str, int] = {}
    for a in net.automata:
        for e in a.edges:
            if e.sends:
                senders[e.channel] = senders.get(e.channel, 0) + 1
            elif e.receives:
                receivers[e.channel] = receivers.get(e.channel, 0) + 1
            elif e.sync:
                raise UnmatchedChannel(f"{a.name}: bad sync {e.sync!r}")
    declared = set(net.channels) if net.channels else set(senders) | set(receivers)
    for ch in set(senders) | set(receivers):
        if ch not in declared:
            raise UnmatchedChannel(f"channel {ch!r} is not declared")
    # a receive-only channel is merely a dead edge; a lone send would block its sender
    for ch in senders:
        if ch not in receivers:
            raise UnmatchedChannel(f"channel {ch!r} is sent but nobody receives it")


def dead_channels(net: Network) -> list[str]:
    """Channels that are received somewhere but never sent."""
    sent = {e.channel for a in net.automata for e in a.edges if e.sends}
    got = {e.channel for a in net.automata for e in a.edges if e.receives}
    return sorted(got - sent)


def _successors(c: _Compiled, state: State) -> list[tuple[Move, State]]:
    locs, vals = state
    env = c.env(vals)
    enabled: list[list[tuple[int, tuple]]] = []
    for ai, rows in enumerate(c.edges):
        here = []
        for ei, (src, tgt, guard, actions, e) in enumerate(rows):
            if src == locs[ai] and (guard is None or guard(env)):
                here.append((ei, rows[ei]))
        enabled.append(here)
    out = []
    names = [a.name for a in c.net.automata]
    for ai, here in enumerate(enabled):
        for ei, (_, tgt, _, actions, e) in here:
            if e.sync:
                continue
            nv = list(vals)
            c.apply(nv, actions, f"{names[ai]}: {e}")
            nl = list(locs)
            nl[ai] = tgt
            out.append((((ai, ei), None), (tuple(nl), tuple(nv))))
    for ai, here in enumerate(enabled):
        for ei, (_, tgt, _, actions, e) in here:
            if not e.sends:
                continue
            for bj, there in enumerate(enabled):
                if bj == ai:
                    continue
                for ej, (_, tgt2, _, actions2, e2) in there:
                    if e2.receives and e2.channel == e.channel:
                        nv = list(vals)
                        c.apply(nv, actions, f"{names[ai]}: {e}")
                        c.apply(nv, actions2, f"{names[bj]}: {e2}")
                        nl = list(locs)
                        nl[ai] = tgt
                        nl[bj] = tgt2
                        out.append((((ai, ei), (bj, ej)), (tuple(nl), tuple(nv))))
    return out


@dataclass
class StateGraph:
    network: Network
    states: list[State]
    succ: list[list[tuple[Move, int]]]
    parent: list[tuple[int, Move] | None]
    _compiled: Any = None

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_transitions(self) -> int:
        return sum(len(s) for s in self.succ)

    def describe_state(self, i: int) -> str:
        locs, vals = self.states[i]
        parts = [f"{a.name}.{a.locations[l].name}" for a, l in zip(self.network.automata, locs)]
        parts += [f"{v.name}={x}" for v, x in zip(self.network.variables, vals)]
        return " ".join(parts)

    def describe_move(self, move: Move) -> str:
        (ai, ei), other = move
        a = self.network.automata[ai]
        s = f"{a.name}: {a.edges[ei]}"
        if other is not None:
            b = self.network.automata[other[0]]
            s += f" || {b.name}: {b.edges[other[1]]}"
        return s

    def path_to(self, i: int) -> list[tuple[Move, int]]:
        out = []
        while self.parent[i] is not None:
            p, move = self.parent[i]
            out.append((move, i))
            i = p
        return list(reversed(out))

    def is_terminal(self, i: int) -> bool:
        locs, _ = self.states[i]
        c = self._compiled
        return all(c.terminal[ai][l] for ai, l in enumerate(locs))

    def holds(self, pred: str, i: int) -> bool:
        return bool(compile_expr(pred)(self._compiled.pred_env(self.states[i])))


def compose_and_explore(network: Network, cap: int = DEFAULT_STATE_CAP) -> StateGraph:
    """Breadth-first reachable state graph; state 0 is the initial state."""
    _check_channels(network)
    c = _Compiled(network)
    init_locs = tuple(c.loc_index[ai][a.initial] for ai, a in enumerate(network.automata))
    init_vals = tuple(v.init for v in network.variables)
    for v in network.variables:
        if not v.low <= v.init <= v.high:
            raise RangeViolation(f"initial {v.name}={v.init} outside [{v.low}, {v.high}]")
    init = (init_locs, init_vals)
    index = {init: 0}
    states = [init]
    succ: list[list[tuple[Move, int]]] = []
    parent: list[tuple[int, Move] | None] = [None]
    queue = deque([0])
    while queue:
        i = queue.popleft()
        row = []
        for move, nxt in _successors(c, states[i]):
            j = index.get(nxt)
            if j is None:
                if len(states) >= cap:
                    raise StateSpaceExceeded(f"more than {cap} states")
                j = len(states)
                index[nxt] = j
                states.append(nxt)
                parent.append((i, move))
                queue.append(j)
            row.append((move, j))
        while len(succ) <= i:
            succ.append([])
        succ[i] = row
    return StateGraph(network, states, succ, parent, c)


# --------------------------------------------------------------------------- queries


@dataclass(frozen=True)
class DeadlockFree:
    pass


@dataclass(frozen=True)
class LeadsTo:
    """AG(p -> AF q)."""

    p: str
    q: str


@dataclass(frozen=True)
class Invariant:
    """AG pred."""

    pred: str


@dataclass(frozen=True)
class Trace:
    """Moves from the initial state; ``loop_start`` marks a lasso's cycle entry."""

    moves: tuple[Move, ...]
    states: tuple[int, ...]
    loop_start: int | None = None

    def render(self, graph: StateGraph) -> str:
        lines = [f"  init: {graph.describe_state(self.states[0])}"]
        for k, (move, s) in enumerate(zip(self.moves, self.states[1:]), 1):
            mark = "  <- cycle re-enters here" if self.loop_start is not None and k == len(self.moves) else ""
            lines.append(f"  {k}. {graph.describe_move(move)}")
            lines.append(f"     => {graph.describe_state(s)}{mark}")
        return "\n".join(lines)


@dataclass(frozen=True)
class CheckResult:
    holds: bool
    trace: Trace | None = None
    reason: str = ""


def _trace_to(graph: StateGraph, i: int) -> list[tuple[Move, int]]:
    return graph.path_to(i)


def _make_trace(prefix: list[tuple[Move, int]], extra: list[tuple[Move, int]] = (), loop_start: int | None = None) -> Trace:
    steps = list(prefix) + list(extra)
    states = (0, *(s for _, s in steps))
    return Trace(tuple(m for m, _ in steps), states, loop_start)


def check(graph: StateGraph, query) -> CheckResult:
    n = graph.n_states
    if isinstance(query, DeadlockFree):
        for i in range(n):
            if not graph.succ[i] and not graph.is_terminal(i):
                return CheckResult(False, _make_trace(_trace_to(graph, i)), f"deadlock in {graph.describe_state(i)}")
        return CheckResult(True)
    if isinstance(query, Invariant):
        fn = compile_expr(query.pred)
        c = graph._compiled
        for i in range(n):
            if not fn(c.pred_env(graph.states[i])):
                return CheckResult(False, _make_trace(_trace_to(graph, i)), f"{query.pred} fails in {graph.describe_state(i)}")
        return CheckResult(True)
    if isinstance(query, LeadsTo):
        return _check_leads_to(graph, query)
    raise TypeError(f"unsupported query {query!r}")


def _check_leads_to(graph: StateGraph, query: LeadsTo) -> CheckResult:
    c = graph._compiled
    pf, qf = compile_expr(query.p), compile_expr(query.q)
    n = graph.n_states
    is_q = [bool(qf(c.pred_env(graph.states[i]))) for i in range(n)]
    starts = [i for i in range(n) if not is_q[i] and pf(c.pred_env(graph.states[i]))]
    # iterative DFS over non-q states; colour 1 = on stack, 2 = done
    colour = [0] * n
    via: dict[int, tuple[int, Move] | None] = {}
    for root in starts:
        if colour[root]:
            continue
        via[root] = None
        stack = [(root, iter(graph.succ[root]))]
        colour[root] = 1
        if not graph.succ[root]:
            return _leads_to_cex(graph, root, via, None, None, "dead end before q")
        while stack:
            v, it = stack[-1]
            advanced = False
            for move, w in it:
                if is_q[w]:
                    continue
                if colour[w] == 1:
                    return _leads_to_cex(graph, v, via, move, w, "cycle avoiding q")
                if colour[w] == 0:
                    via[w] = (v, move)
                    colour[w] = 1
                    if not graph.succ[w]:
                        return _leads_to_cex(graph, w, via, None, None, "dead end before q")
                    stack.append((w, iter(graph.succ[w])))
                    advanced = True
                    break
            if not advanced:
                colour[v] = 2
                stack.pop()
    return CheckResult(True)


def _leads_to_cex(graph, end, via, back_move, back_to, reason) -> CheckResult:
    chain = []
    v = end
    while via[v] is not None:
        u, move = via[v]
        chain.append((move, v))
        v = u
    chain.reverse()
    prefix = _trace_to(graph, v)  # v is the p-state where the DFS started
    steps = prefix + chain
    loop_start = None
    if back_move is not None:
        loop_start = len(prefix) + next(k for k, (_, s) in enumerate([(None, v)] + chain) if s == back_to)
        steps = steps + [(back_move, back_to)]
    return CheckResult(False, _make_trace(steps, (), loop_start), reason)


def replay(network: Network, trace: Trace) -> list[State]:
    """Re-execute ``trace`` from the initial state; raise if a move is illegal."""
    c = _Compiled(network)
    state = (
        tuple(c.loc_index[ai][a.initial] for ai, a in enumerate(network.automata)),
        tuple(v.init for v in network.variables),
    )
    visited = [state]
    for move in trace.moves:
        options = dict((m, s) for m, s in _successors(c, state))
        if move not in options:
            raise ValueError(f"illegal move {move} in state {state}")
        state = options[move]
        visited.append(state)
    return visited


# --------------------------------------------------------------------------- file format


def network_from_dict(data: Mapping[str, Any]) -> Network:
    variables = tuple(
        Variable(name, int(spec.get("low", 0)), int(spec.get("high", 1)), int(spec.get("init", 0)))
        for name, spec in data.get("variables", {}).items()
    )
    automata = []
    for a in data["automata"]:
        locs = []
        for name, spec in a["locations"].items():
            if isinstance(spec, Mapping):
                locs.append(Location(name, frozenset(spec.get("labels", ())), bool(spec.get("terminal", False))))
            else:
                locs.append(Location(name, frozenset(spec)))
        edges = tuple(
            Edge(e["from"], e["to"], e.get("guard", ""), e.get("action", ""), e.get("sync", ""))
            for e in a.get("edges", [])
        )
        automata.append(Automaton(a["name"], tuple(locs), a.get("initial", locs[0].name), edges))
    return Network(
        tuple(automata),
        variables,
        tuple(data.get("channels", ())),
        {k: dict(v) for k, v in data.get("queries", {}).items()},
        data.get("name", ""),
        data.get("config_differs", ""),
    )


def load_network_dict(path: str | Path) -> dict[str, Any]:
    return tomli.loads(Path(path).read_text())


def load_network(path: str | Path) -> Network:
    return network_from_dict(load_network_dict(path))


def mutate(data: Mapping[str, Any], fn: Callable[[dict], None]) -> dict[str, Any]:
    """Deep-copy a network definition and apply ``fn`` to the copy."""
    d = copy.deepcopy(dict(data))
    fn(d)
    return d
