"""Quantitative verification of DTMC/CTMC properties.

Three numerical routines back :func:`evaluate`:

* unbounded reachability on DTMCs (linear solve over the "maybe" states),
* expected reward accumulated until a target is reached (DTMC),
* expected reward accumulated over ``[0, horizon]`` on a CTMC, computed by
  uniformization.

:func:`verify_config_space` runs a batch of configurations under a single
wall-clock deadline, checked cooperatively between configurations and between
blocks of uniformization terms.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.stats import poisson

from .models import (
    Bound,
    CumulReward,
    IndependentSum,
    MarkovModel,
    ModelKind,
    ProbReach,
    Property,
    ReachReward,
)

__all__ = [
    "VerificationError",
    "NonConvergence",
    "DivergentReward",
    "HorizonOverflow",
    "IncompatibleProperty",
    "DeadlineExceeded",
    "dtmc_reach_probability",
    "dtmc_expected_reward",
    "ctmc_cumulative_reward",
    "evaluate",
    "VerificationResult",
    "ConfigResult",
    "BatchOutcome",
    "verify_config_space",
]

DIRECT_SOLVE_LIMIT = 2000
GS_EPSILON = 1e-9
GS_MAX_ITER = 100_000
UNIF_EPSILON = 1e-6
UNIF_PADDING = 1.02
UNIF_BLOCK = 256
MAX_TERMS = 1_000_000
SLEEP_SLICE = 0.01


class VerificationError(Exception):
    pass


class NonConvergence(VerificationError):
    pass


class DivergentReward(VerificationError):
    pass


class HorizonOverflow(VerificationError):
    pass


class IncompatibleProperty(VerificationError):
    pass


class DeadlineExceeded(VerificationError):
    pass


def _check_deadline(deadline_at: float | None) -> None:
    if deadline_at is not None and time.monotonic() >= deadline_at:
        raise DeadlineExceeded()


# --------------------------------------------------------------------------- linear algebra


def _gauss_seidel(A: sp.csr_matrix, b: np.ndarray, deadline_at: float | None = None) -> np.ndarray:
    A = sp.csr_matrix(A)
    n = A.shape[0]
    diag = A.diagonal()
    if np.any(diag == 0):
        raise NonConvergence("zero diagonal entry")
    x = np.zeros(n)
    indptr, indices, data = A.indptr, A.indices, A.data
    for it in range(GS_MAX_ITER):
        if it % 100 == 0:
            _check_deadline(deadline_at)
        delta = 0.0
        for i in range(n):
            lo, hi = indptr[i], indptr[i + 1]
            s = b[i]
            for k in range(lo, hi):
                j = indices[k]
                if j != i:
                    s -= data[k] * x[j]
            new = s / diag[i]
            d = abs(new - x[i])
            if d > delta:
                delta = d
            x[i] = new
        if delta < GS_EPSILON:
            return x
    raise NonConvergence(f"Gauss-Seidel did not converge in {GS_MAX_ITER} iterations")


def _solve(A: sp.spmatrix, b: np.ndarray, deadline_at: float | None = None) -> np.ndarray:
    if A.shape[0] == 0:
        return np.zeros(0)
    if A.shape[0] <= DIRECT_SOLVE_LIMIT:
        dense = A.toarray() if sp.issparse(A) else np.asarray(A)
        try:
            return np.linalg.solve(dense, b)
        except np.linalg.LinAlgError:
            raise NonConvergence("singular system") from None
    return _gauss_seidel(sp.csr_matrix(A), b, deadline_at)


def _backward_reachable(P: sp.csr_matrix, targets: Iterable[int]) -> set[int]:
    Pt = sp.csr_matrix(P.T)
    seen = set(targets)
    stack = list(seen)
    while stack:
        t = stack.pop()
        for s in Pt.indices[Pt.indptr[t] : Pt.indptr[t + 1]]:
            if s not in seen:
                seen.add(int(s))
                stack.append(int(s))
    return seen


def _forward_reachable(P: sp.csr_matrix, start: int, stop: set[int]) -> list[int]:
    seen = {start}
    stack = [start]
    while stack:
        s = stack.pop()
        if s in stop:
            continue
        for t in P.indices[P.indptr[s] : P.indptr[s + 1]]:
            t = int(t)
            if t not in seen:
                seen.add(t)
                stack.append(t)
    return sorted(seen)


def _require(model, kind: ModelKind) -> None:
    if model.kind is not kind:
        raise IncompatibleProperty(f"expected a {kind.value.upper()}, got {model.kind.value.upper()}")


# --------------------------------------------------------------------------- DTMC


def reach_probabilities(model: MarkovModel, target_label: str, deadline_at: float | None = None) -> np.ndarray:
    """Vector of P(F target) for every state."""
    _require(model, ModelKind.DTMC)
    targets = set(model.label_states(target_label))
    P = model.matrix()
    n = model.n_states
    can_reach = _backward_reachable(P, targets)
    maybe = sorted(can_reach - targets)
    x = np.zeros(n)
    x[list(targets)] = 1.0
    if maybe:
        Pm = P[maybe][:, maybe]
        tgt = sorted(targets)
        b = np.asarray(P[maybe][:, tgt].sum(axis=1)).ravel()
        A = sp.identity(len(maybe), format="csr") - Pm
        x[maybe] = _solve(A, b, deadline_at)
    return np.clip(x, 0.0, 1.0)


def dtmc_reach_probability(model: MarkovModel, target_label: str, *, deadline_at: float | None = None) -> float:
    return float(reach_probabilities(model, target_label, deadline_at)[model.initial])


def _effective_rewards(model: MarkovModel, reward_name: str) -> np.ndarray:
    """State reward plus expected transition reward per step (DTMC) or per unit time (CTMC)."""
    rs = model.reward(reward_name)
    r = rs.state_vector(model.n_states)
    for s, t, w in model.transitions:
        iota = rs.transition_rewards.get((s, t), 0.0)
        if iota:
            r[s] += w * iota
    return r


def dtmc_expected_reward(
    model: MarkovModel, reward_name: str, target_label: str, *, deadline_at: float | None = None
) -> float:
    """Expected reward accumulated until the first visit to a target state.

    State rewards of non-target states are collected on each visit; the
    target's own state reward is not collected.
    """
    _require(model, ModelKind.DTMC)
    probs = reach_probabilities(model, target_label, deadline_at)
    if probs[model.initial] < 1.0 - 1e-9:
        raise DivergentReward(
            f"target {target_label!r} reached with probability {probs[model.initial]:.12g} < 1"
        )
    targets = set(model.label_states(target_label))
    if model.initial in targets:
        return 0.0
    P = model.matrix()
    live = [s for s in _forward_reachable(P, model.initial, targets) if s not in targets]
    r = _effective_rewards(model, reward_name)
    A = sp.identity(len(live), format="csr") - P[live][:, live]
    y = _solve(A, r[live], deadline_at)
    return float(y[live.index(model.initial)])


# --------------------------------------------------------------------------- CTMC


def ctmc_cumulative_reward(
    model: MarkovModel,
    reward_name: str,
    horizon: float,
    *,
    deadline_at: float | None = None,
    max_terms: int = MAX_TERMS,
    epsilon: float = UNIF_EPSILON,
) -> float:
    """Expected reward accumulated over ``[0, horizon]`` by uniformization.

    Uses ``E[C(T)] = sum_k P(N > k) / q * (pi_0 P^k) . rho`` with
    ``N ~ Poisson(q T)``; the series is truncated once the retained Poisson
    mass reaches ``1 - epsilon`` of its total ``q T``.
    """
    _require(model, ModelKind.CTMC)
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    rho = _effective_rewards(model, reward_name)
    if not rho.any():
        return 0.0
    n = model.n_states
    R = model.matrix()
    exits = np.asarray(R.sum(axis=1)).ravel()
    max_exit = float(exits.max()) if n else 0.0
    if max_exit == 0.0:
        return float(rho[model.initial] * horizon)
    q = UNIF_PADDING * max_exit
    if n <= 64:
        P = np.eye(n) - np.diag(exits / q) + R.toarray() / q
        Pt = P.T.copy()
    else:
        P = sp.identity(n, format="csr") - sp.diags(exits / q) + R / q
        Pt = sp.csr_matrix(P.T)
    qt = q * horizon
    target_mass = qt * (1.0 - epsilon)
    pi = np.zeros(n)
    pi[model.initial] = 1.0
    total = 0.0
    mass = 0.0
    k = 0
    while True:
        _check_deadline(deadline_at)
        if k >= max_terms:
            raise HorizonOverflow(f"uniformization needs more than {max_terms} terms (q*T={qt:.3g})")
        ks = np.arange(k, min(k + UNIF_BLOCK, max_terms))
        tails = poisson.sf(ks, qt)
        for tail in tails:
            total += tail * float(pi @ rho)
            mass += tail
            k += 1
            if mass >= target_mass or tail == 0.0:
                return total / q
            pi = Pt @ pi


# --------------------------------------------------------------------------- dispatch


@dataclass(frozen=True)
class VerificationResult:
    property: Property
    numeric_value: float
    satisfied: bool | None
    wall_time: float
    model_digest: str

    @property
    def name(self) -> str:
        return self.property.name or type(self.property).__name__


def evaluate(model: MarkovModel | IndependentSum, prop: Property, *, deadline_at: float | None = None) -> VerificationResult:
    start = time.perf_counter()
    if isinstance(prop, CumulReward):
        if model.kind is not ModelKind.CTMC:
            raise IncompatibleProperty("cumulative-reward properties need a CTMC")
        if isinstance(model, IndependentSum):
            value = model.cumulative_reward(prop.horizon, prop.reward_name, deadline_at=deadline_at)
        else:
            value = ctmc_cumulative_reward(model, prop.reward_name, prop.horizon, deadline_at=deadline_at)
    elif isinstance(prop, ProbReach):
        if model.kind is not ModelKind.DTMC:
            raise IncompatibleProperty("reachability properties need a DTMC")
        value = dtmc_reach_probability(model, prop.target_label, deadline_at=deadline_at)
    elif isinstance(prop, ReachReward):
        if model.kind is not ModelKind.DTMC:
            raise IncompatibleProperty("reachability-reward properties need a DTMC")
        value = dtmc_expected_reward(model, prop.reward_name, prop.target_label, deadline_at=deadline_at)
    else:
        raise IncompatibleProperty(f"unsupported property {prop!r}")
    return VerificationResult(
        property=prop,
        numeric_value=float(value),
        satisfied=prop.bound.holds(value, prop.threshold),
        wall_time=time.perf_counter() - start,
        model_digest=model.digest(),
    )


# --------------------------------------------------------------------------- batches


def config_fields(config: Any) -> dict[str, Any]:
    if hasattr(config, "as_row"):
        return config.as_row()
    if isinstance(config, Mapping):
        return dict(config)
    return {"config": str(config)}


@dataclass(frozen=True)
class ConfigResult:
    index: int
    config: Any
    results: tuple[VerificationResult, ...] = ()
    error: str | None = None

    @property
    def feasible(self) -> bool:
        return self.error is None and all(r.satisfied is not False for r in self.results)

    def value(self, name: str) -> float:
        for r in self.results:
            if r.name == name:
                return r.numeric_value
        raise KeyError(name)

    def digest(self) -> str:
        """Content digest of this evidence row (wall times excluded)."""
        parts = [repr(sorted(config_fields(self.config).items()))]
        parts += [f"{r.name}={r.numeric_value!r}:{r.satisfied}:{r.model_digest}" for r in self.results]
        parts.append(f"error={self.error}")
        return hashlib.sha256("|".join(parts).encode()).hexdigest()[:16]


@dataclass
class BatchOutcome:
    entries: list[ConfigResult] = field(default_factory=list)
    deadline_exceeded: bool = False
    elapsed: float = 0.0
    deadline: float = math.inf

    @property
    def feasible(self) -> list[ConfigResult]:
        return [e for e in self.entries if e.feasible]

    def entry_for(self, config: Any) -> ConfigResult | None:
        for e in self.entries:
            if e.config == config:
                return e
        return None

    def digest(self) -> str:
        h = hashlib.sha256()
        for e in self.entries:
            h.update(e.digest().encode())
        h.update(f"deadline_exceeded={self.deadline_exceeded}".encode())
        return h.hexdigest()[:16]

    def to_csv(self) -> str:
        """One row per configuration; wall times are left out so output is reproducible."""
        names: list[str] = []
        for e in self.entries:
            for r in e.results:
                if r.name not in names:
                    names.append(r.name)
        cfg_cols: list[str] = []
        for e in self.entries:
            for k in config_fields(e.config):
                if k not in cfg_cols:
                    cfg_cols.append(k)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "config", *cfg_cols, *names, "feasible", "error", "digest"])
        for e in self.entries:
            row = config_fields(e.config)
            vals = {r.name: repr(r.numeric_value) for r in e.results}
            w.writerow(
                [e.index, str(e.config), *(row.get(c, "") for c in cfg_cols), *(vals.get(n, "") for n in names),
                 e.feasible, e.error or "", e.digest()]
            )
        return buf.getvalue()


def _sleep_cooperatively(seconds: float, deadline_at: float | None) -> None:
    end = time.monotonic() + seconds
    while True:
        _check_deadline(deadline_at)
        left = end - time.monotonic()
        if left <= 0:
            return
        time.sleep(min(SLEEP_SLICE, left))


def verify_config_space(
    template: Any,
    configs: Sequence[Any],
    properties: Sequence[Property] | Callable[[Any], Sequence[Property]],
    deadline: float = math.inf,
    *,
    latency: Callable[[int], float] | None = None,
) -> BatchOutcome:
    """Evaluate ``properties`` for every configuration, in order.

    ``template.instantiate(config)`` must return a model (or an
    :class:`IndependentSum`). ``properties`` may depend on the configuration.
    Solver failures are recorded per entry; the batch stops early with
    ``deadline_exceeded`` set once ``deadline`` seconds have elapsed.
    ``latency`` injects an artificial delay before configuration ``i``
    (fault injection for failsafe tests); it is cancelled by the deadline.
    """
    start = time.monotonic()
    deadline_at = start + deadline if math.isfinite(deadline) else None
    outcome = BatchOutcome(deadline=deadline)
    try:
        for i, config in enumerate(configs):
            _check_deadline(deadline_at)
            if latency is not None:
                delay = latency(i)
                if delay > 0:
                    _sleep_cooperatively(delay, deadline_at)
            props = properties(config) if callable(properties) else properties
            try:
                model = template.instantiate(config)
                results = tuple(evaluate(model, p, deadline_at=deadline_at) for p in props)
                outcome.entries.append(ConfigResult(i, config, results))
            except DeadlineExceeded:
                raise
            except Exception as exc:  # per-entry failure, batch continues
                outcome.entries.append(ConfigResult(i, config, (), f"{type(exc).__name__}: {exc}"))
    except DeadlineExceeded:
        outcome.deadline_exceeded = True
    outcome.elapsed = time.monotonic() - start
    return outcome
