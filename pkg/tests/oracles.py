"""Independent oracles: closed forms, Monte-Carlo simulation and brute force.

None of these call into the verifier's solvers.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
import numpy as np

from selfadapt.models import MarkovModel, ModelKind, RewardStructure


# --------------------------------------------------------------------------- DTMC corpus


@dataclass(frozen=True)
class DtmcCase:
    name: str
    model: MarkovModel
    query: str  # "reach" or "reward"
    target: str
    expected: float
    reward: str = ""


def _dtmc(states, trans, labels, rewards=None, initial=0) -> MarkovModel:
    return MarkovModel(
        ModelKind.DTMC,
        tuple(states),
        tuple(trans),
        initial,
        {k: frozenset(v) for k, v in labels.items()},
        {k: RewardStructure(*v) for k, v in (rewards or {}).items()},
    )


def gambler(n: int, p: float, start: int) -> MarkovModel:
    states = [f"k{i}" for i in range(n + 1)]
    trans = [(0, 0, 1.0), (n, n, 1.0)]
    for i in range(1, n):
        trans += [(i, i + 1, p), (i, i - 1, 1 - p)]
    steps = {i: 1.0 for i in range(1, n)}
    return _dtmc(states, trans, {"win": {n}, "stop": {0, n}}, {"steps": (steps, {})}, start)


def gambler_win(n: int, p: float, i: int) -> float:
    q = 1 - p
    if p == q:
        return i / n
    r = q / p
    return (1 - r**i) / (1 - r**n)


def gambler_duration(n: int, p: float, i: int) -> float:
    q = 1 - p
    if p == q:
        return i * (n - i)
    r = q / p
    return i / (q - p) - n / (q - p) * (1 - r**i) / (1 - r**n)


def two_branch(p: float) -> MarkovModel:
    return _dtmc(("s", "ok", "ko"), [(0, 1, p), (0, 2, 1 - p), (1, 1, 1.0), (2, 2, 1.0)], {"ok": {1}, "end": {1, 2}})


def geometric_retry(q: float, cost: float) -> MarkovModel:
    # try; with probability q repeat (transition reward on the retry edge too)
    return _dtmc(
        ("try", "done"),
        [(0, 0, q), (0, 1, 1 - q), (1, 1, 1.0)],
        {"done": {1}},
        {"cost": ({0: cost}, {(0, 0): 1.0})},
    )


def series(rel: list[float], times: list[float]) -> MarkovModel:
    """Chain of services; service k fails with 1 - rel[k]. Time is a state reward."""
    n = len(rel)
    states = [f"svc{k}" for k in range(n)] + ["done", "fail"]
    done, fail = n, n + 1
    trans = []
    for k, r in enumerate(rel):
        trans += [(k, k + 1 if k + 1 < n else done, r), (k, fail, 1 - r)]
    trans += [(done, done, 1.0), (fail, fail, 1.0)]
    return _dtmc(states, trans, {"done": {done}, "end": {done, fail}}, {"time": ({k: t for k, t in enumerate(times)}, {})})


def pipeline(stages: list[tuple[float, float]]) -> MarkovModel:
    """Stages with retry probability q_k and per-attempt cost c_k."""
    n = len(stages)
    trans, rew = [], {}
    for k, (q, c) in enumerate(stages):
        trans += [(k, k, q), (k, k + 1, 1 - q)]
        rew[k] = c
    trans.append((n, n, 1.0))
    return _dtmc([f"st{k}" for k in range(n + 1)], trans, {"done": {n}}, {"cost": (rew, {})})


def dtmc_corpus() -> list[DtmcCase]:
    cases: list[DtmcCase] = []
    for p, i in [(0.3, 2), (0.5, 2), (0.6, 1), (0.45, 4)]:
        m = gambler(5, p, i)
        cases.append(DtmcCase(f"gambler-win-p{p}-i{i}", m, "reach", "win", gambler_win(5, p, i)))
        cases.append(DtmcCase(f"gambler-steps-p{p}-i{i}", m, "reward", "stop", gambler_duration(5, p, i), "steps"))
    for p in (0.1, 0.5, 0.9):
        cases.append(DtmcCase(f"branch-{p}", two_branch(p), "reach", "ok", p))
    for q, c in [(0.2, 1.0), (0.75, 2.5)]:
        m = geometric_retry(q, c)
        cases.append(DtmcCase(f"retry-reach-{q}", m, "reach", "done", 1.0))
        # each attempt costs c, each retry edge adds 1: c/(1-q) + q/(1-q)
        cases.append(DtmcCase(f"retry-cost-{q}", m, "reward", "done", (c + q) / (1 - q), "cost"))
    for rel, times in [([0.99, 0.95, 0.9], [1.0, 2.0, 0.5]), ([0.8, 0.7], [3.0, 1.0])]:
        m = series(rel, times)
        cases.append(DtmcCase(f"series-reach-{len(rel)}", m, "reach", "done", math.prod(rel)))
        exp_t = sum(t * math.prod(rel[:k]) for k, t in enumerate(times))
        cases.append(DtmcCase(f"series-time-{len(rel)}", m, "reward", "end", exp_t, "time"))
    stages = [(0.5, 1.0), (0.1, 3.0), (0.9, 0.2)]
    cases.append(DtmcCase("pipeline-cost", pipeline(stages), "reward", "done", sum(c / (1 - q) for q, c in stages), "cost"))
    # unreachable target, and target equal to the initial state
    m = _dtmc(("a", "b", "c"), [(0, 1, 1.0), (1, 0, 1.0), (2, 2, 1.0)], {"c": {2}, "a": {0}}, {"one": ({0: 1.0, 1: 1.0}, {})})
    cases.append(DtmcCase("unreachable", m, "reach", "c", 0.0))
    cases.append(DtmcCase("initial-is-target", m, "reach", "a", 1.0))
    cases.append(DtmcCase("initial-is-target-reward", m, "reward", "a", 0.0, "one"))
    return cases


# --------------------------------------------------------------------------- CTMC Monte Carlo


# uniformization truncates the Poisson series at 1e-6 of its mass
SOLVER_REL_TOL = 1e-6


def within_mc(value: float, mean: float, se: float, k: float = 3.0) -> bool:
    return abs(value - mean) <= k * se + SOLVER_REL_TOL * abs(value)


def mc_cumulative_reward(model: MarkovModel, reward: str, horizon: float, n: int = 10**6, seed: int = 0) -> tuple[float, float]:
    """Sample mean and standard error of the reward accumulated over [0, horizon]."""
    rng = np.random.default_rng(seed)
    k = model.n_states
    Q = np.zeros((k, k))
    iota = np.zeros((k, k))
    rs = model.reward(reward)
    for s, t, w in model.transitions:
        Q[s, t] += w
    for (s, t), v in rs.transition_rewards.items():
        iota[s, t] = v
    rho = rs.state_vector(k)
    exit_rate = Q.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        P = np.where(exit_rate[:, None] > 0, Q / exit_rate[:, None], 0.0)
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0

    state = np.full(n, model.initial)
    clock = np.zeros(n)
    acc = np.zeros(n)
    active = np.arange(n)
    while active.size:
        s = state[active]
        rate = exit_rate[s]
        with np.errstate(divide="ignore"):
            dt = np.where(rate > 0, rng.exponential(1.0, active.size) / np.where(rate > 0, rate, 1.0), np.inf)
        left = horizon - clock[active]
        acc[active] += rho[s] * np.minimum(dt, left)
        jump = dt < left
        idx = active[jump]
        if idx.size:
            sj = s[jump]
            u = rng.random(idx.size)
            nxt = (u[:, None] >= cum[sj]).sum(axis=1)
            nxt = np.minimum(nxt, k - 1)
            acc[idx] += iota[sj, nxt]
            clock[idx] += dt[jump]
            state[idx] = nxt
        active = idx
    return float(acc.mean()), float(acc.std(ddof=1) / math.sqrt(n))


def _ctmc(states, trans, rewards, initial=0, labels=None) -> MarkovModel:
    return MarkovModel(
        ModelKind.CTMC,
        tuple(states),
        tuple(trans),
        initial,
        {k: frozenset(v) for k, v in (labels or {}).items()},
        {k: RewardStructure(*v) for k, v in rewards.items()},
    )


@dataclass(frozen=True)
class CtmcCase:
    name: str
    model: MarkovModel
    reward: str
    horizon: float


def ctmc_corpus() -> list[CtmcCase]:
    from selfadapt.uuv import SensorSpec, build_sensor_template, explicit_switching_model

    s1 = SensorSpec("s1", 5, 3, 10, 2, 0.93, 0.06)
    s2 = SensorSpec("s2", 4, 2.4, 8, 1.5, 0.93, 0.06)
    m1 = build_sensor_template(s1).instantiate({"r": 5.0, "sp": 2.0})
    m2 = build_sensor_template(s2).instantiate({"r": 4.0, "sp": 3.0})
    s3 = SensorSpec("s3", 4, 2.1, 5, 1, 0.88, 0.08)
    m3 = build_sensor_template(s3).instantiate({"r": 1.0, "sp": 1.5})
    rng = np.random.default_rng(7)

    def random_ctmc(k: int) -> MarkovModel:
        trans = [(i, j, float(rng.uniform(0.2, 2.0))) for i in range(k) for j in range(k) if i != j and rng.random() < 0.6]
        for i in range(k):
            if not any(a == i for a, _, _ in trans):
                trans.append((i, (i + 1) % k, float(rng.uniform(0.2, 2.0))))
        sr = {i: float(rng.uniform(0, 2)) for i in range(k)}
        tr = {(i, j): float(rng.uniform(0, 1)) for i, j, _ in trans}
        return _ctmc([f"q{i}" for i in range(k)], trans, {"r": (sr, tr)})

    return [
        CtmcCase("sensor1-measure", m1, "measure", 5.0),
        CtmcCase("sensor1-energy", m1, "energy", 5.0),
        CtmcCase("sensor2-measure", m2, "measure", 10 / 3),
        CtmcCase("onoff-availability", _ctmc(("down", "up"), [(0, 1, 2.0), (1, 0, 0.5)], {"up": ({1: 1.0}, {})}), "up", 3.0),
        CtmcCase(
            "birth-death",
            _ctmc(
                ("b0", "b1", "b2", "b3"),
                [(0, 1, 1.5), (1, 0, 1.0), (1, 2, 1.5), (2, 1, 2.0), (2, 3, 1.5), (3, 2, 3.0)],
                {"load": ({1: 1.0, 2: 2.0, 3: 3.0}, {(2, 3): 0.5})},
            ),
            "load",
            4.0,
        ),
        CtmcCase(
            "absorbing-chain",
            _ctmc(("a", "b", "c"), [(0, 1, 2.0), (1, 2, 3.0)], {"w": ({0: 1.0, 1: 4.0, 2: 0.25}, {(0, 1): 2.0})}),
            "w",
            2.0,
        ),
        CtmcCase("switching-on", explicit_switching_model(s1, 5.0, 2.0, True, 50.0), "energy", 4.0),
        CtmcCase("switching-off", explicit_switching_model(s2, 4.0, 2.0, False, 20.0), "energy", 4.0),
        CtmcCase("random-5", random_ctmc(5), "r", 3.0),
        CtmcCase("random-3", random_ctmc(3), "r", 6.0),
        CtmcCase(
            "cycle-transition-rewards",
            _ctmc(("x", "y", "z"), [(0, 1, 1.0), (1, 2, 1.2), (2, 0, 0.8)], {"t": ({}, {(0, 1): 1.0, (1, 2): 2.0, (2, 0): 3.0})}),
            "t",
            20.0,
        ),
        CtmcCase("sensor3-energy", m3, "energy", 10 / 1.5),
    ]


def expm_cumulative_reward(model: MarkovModel, reward: str, horizon: float) -> float:
    """Exact cumulative reward from the exponential of the generator augmented with a reward column."""
    from scipy.linalg import expm

    n = model.n_states
    Q = np.zeros((n, n))
    for s, t, w in model.transitions:
        Q[s, t] += w
    rs = model.rewards[reward]
    r = rs.state_vector(n).astype(float)
    for (s, t), v in rs.transition_rewards.items():
        r[s] += Q[s, t] * v
    Q -= np.diag(Q.sum(axis=1))
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = Q
    A[:n, n] = r
    return float(expm(A * horizon)[model.initial, n])


def explicit_product(a: MarkovModel, b: MarkovModel, reward: str) -> MarkovModel:
    """Explicit interleaving product of two CTMCs with additive rewards."""
    na, nb = a.n_states, b.n_states
    idx = lambda i, j: i * nb + j
    trans, tr, sr = [], {}, {}
    ra, rb = a.reward(reward), b.reward(reward)
    for i in range(na):
        for j in range(nb):
            s = idx(i, j)
            sr[s] = ra.state_rewards.get(i, 0.0) + rb.state_rewards.get(j, 0.0)
            for (x, y, w) in a.transitions:
                if x == i:
                    trans.append((s, idx(y, j), w))
                    tr[(s, idx(y, j))] = ra.transition_rewards.get((x, y), 0.0)
            for (x, y, w) in b.transitions:
                if x == j:
                    trans.append((s, idx(i, y), w))
                    tr[(s, idx(i, y))] = rb.transition_rewards.get((x, y), 0.0)
    states = tuple(f"{p}|{q}" for p in a.states for q in b.states)
    return MarkovModel(ModelKind.CTMC, states, tuple(trans), idx(a.initial, b.initial), {}, {reward: RewardStructure(sr, tr)})


# --------------------------------------------------------------------------- UUV closed form


def uuv_closed_form(app, rates, config) -> tuple[float, float]:
    """Expected accurate measurements and energy over the window for ``config``.

    Each sensor CTMC measures at constant rate r in every state, so both
    rewards grow linearly in time.
    """
    T = app.window / config.speed
    meas = energy = 0.0
    for spec, r, x in zip(app.specs, rates, config.sensors):
        if x:
            meas += r * spec.accuracy(config.speed) * T
            energy += r * spec.e * T + spec.e_on
        else:
            energy += spec.e_off
    return meas, energy


@dataclass(frozen=True)
class OracleChoice:
    best: object | None
    cost: float | None
    feasible: list
    # configurations whose feasibility or cost sits within tolerance of a decision boundary
    ambiguous: list


def uuv_oracle(app, rates, tol: float = 1e-5) -> OracleChoice:
    rows = []
    for c in app.configurations():
        meas, energy = uuv_closed_form(app, rates, c)
        rows.append((c, meas, energy, energy * app.weights[0] + app.weights[1] / c.speed))
    feas = [r for r in rows if r[1] >= app.measure_min and r[2] <= app.energy_max]
    near = [r[0] for r in rows if abs(r[1] - app.measure_min) <= tol * app.measure_min or abs(r[2] - app.energy_max) <= tol * app.energy_max]
    if not feas:
        return OracleChoice(None, None, [], near)
    best = min(feas, key=lambda r: r[3])
    ties = [r[0] for r in feas if r[0] != best[0] and abs(r[3] - best[3]) <= tol * max(1.0, abs(best[3]))]
    return OracleChoice(best[0], best[3], [r[0] for r in feas], near + ties)


def fx_oracle(app, observations) -> OracleChoice:
    """Brute force over all service selections using dense numpy solves."""
    factory = app.model_factory(observations)
    rows = []
    for c in app.configurations():
        m = factory.instantiate(c)
        rel = _dense_reach(m, "done")
        t = _dense_reward(m, "time", "end")
        price = _dense_reward(m, "price", "end")
        rows.append((c, rel, t, price, app.weights[0] * price + app.weights[1] * t))
    feas = [r for r in rows if r[1] >= app.reliability_min and r[2] <= app.time_max]
    tol = 1e-7
    near = [r[0] for r in rows if abs(r[1] - app.reliability_min) <= tol or abs(r[2] - app.time_max) <= tol]
    if not feas:
        return OracleChoice(None, None, [], near)
    best = min(feas, key=lambda r: r[4])
    ties = [r[0] for r in feas if r[0] != best[0] and abs(r[4] - best[4]) <= 1e-9 * max(1.0, abs(best[4]))]
    return OracleChoice(best[0], best[4], [r[0] for r in feas], near + ties)


def _dense(m: MarkovModel) -> np.ndarray:
    P = np.zeros((m.n_states, m.n_states))
    for s, t, w in m.transitions:
        P[s, t] += w
    return P


def _dense_reach(m: MarkovModel, label: str) -> float:
    P = _dense(m)
    tgt = sorted(m.labels[label])
    rest = [s for s in range(m.n_states) if s not in tgt and P[s, s] < 1.0]
    x = np.zeros(m.n_states)
    x[tgt] = 1.0
    A = np.eye(len(rest)) - P[np.ix_(rest, rest)]
    b = P[np.ix_(rest, tgt)].sum(axis=1)
    x[rest] = np.linalg.solve(A, b)
    return float(x[m.initial])


def _dense_reward(m: MarkovModel, reward: str, label: str) -> float:
    P = _dense(m)
    tgt = set(m.labels[label])
    rest = [s for s in range(m.n_states) if s not in tgt]
    rs = m.rewards[reward]
    r = np.array([rs.state_rewards.get(s, 0.0) + sum(P[s, t] * rs.transition_rewards.get((s, t), 0.0) for t in range(m.n_states)) for s in rest])
    A = np.eye(len(rest)) - P[np.ix_(rest, rest)]
    y = np.linalg.solve(A, r)
    return float(y[rest.index(m.initial)]) if m.initial in rest else 0.0


def mc_dtmc(model: MarkovModel, target: str, reward: str | None, n: int = 10**6, seed: int = 0, max_steps: int = 10_000):
    """Monte-Carlo estimate of P(F target) or E[reward until target]."""
    rng = np.random.default_rng(seed)
    P = _dense(model)
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0
    tgt = np.zeros(model.n_states, bool)
    tgt[list(model.labels[target])] = True
    if reward:
        rs = model.rewards[reward]
        rho = rs.state_vector(model.n_states)
        iota = np.zeros_like(P)
        for (s, t), v in rs.transition_rewards.items():
            iota[s, t] = v
    state = np.full(n, model.initial)
    acc = np.zeros(n)
    hit = tgt[state].copy()
    active = np.flatnonzero(~hit)
    for _ in range(max_steps):
        if not active.size:
            break
        s = state[active]
        u = rng.random(active.size)
        nxt = np.minimum((u[:, None] >= cum[s]).sum(axis=1), model.n_states - 1)
        if reward:
            acc[active] += rho[s] + iota[s, nxt]
        state[active] = nxt
        now = tgt[nxt]
        hit[active[now]] = True
        absorbed = (P[nxt, nxt] >= 1.0) & ~now
        active = active[~now & ~absorbed]
    if reward:
        return float(acc.mean()), float(acc.std(ddof=1) / math.sqrt(n))
    p = hit.mean()
    return float(p), float(math.sqrt(p * (1 - p) / n))


def all_pairs(seq):
    return itertools.product(seq, seq)
