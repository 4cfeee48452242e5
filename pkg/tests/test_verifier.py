import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import ctmc_corpus, dtmc_corpus, explicit_product, expm_cumulative_reward, mc_cumulative_reward, mc_dtmc, within_mc
from selfadapt.models import Bound, CumulReward, MarkovModel, ModelKind, ProbReach, ReachReward, RewardStructure, build_independent_sum
from selfadapt.uuv import SensorSpec, build_sensor_template, explicit_switching_model
from selfadapt.verifier import (
    DeadlineExceeded,
    DivergentReward,
    HorizonOverflow,
    IncompatibleProperty,
    ctmc_cumulative_reward,
    dtmc_expected_reward,
    dtmc_reach_probability,
    evaluate,
    verify_config_space,
)


@pytest.mark.parametrize("case", dtmc_corpus(), ids=lambda c: c.name)
def test_dtmc_corpus_matches_closed_forms(case):
    if case.query == "reach":
        value = dtmc_reach_probability(case.model, case.target)
    else:
        value = dtmc_expected_reward(case.model, case.reward, case.target)
    assert abs(value - case.expected) <= 1e-9


@pytest.mark.parametrize("case", ctmc_corpus(), ids=lambda c: c.name)
def test_ctmc_cumulative_reward_against_monte_carlo(case):
    # the acceptance suite repeats this with 10^6 runs
    mean, se = mc_cumulative_reward(case.model, case.reward, case.horizon, n=200_000, seed=11)
    value = ctmc_cumulative_reward(case.model, case.reward, case.horizon)
    assert within_mc(value, mean, se), (value, mean, se)


@pytest.mark.parametrize("case", ctmc_corpus(), ids=lambda c: c.name)
def test_ctmc_cumulative_reward_against_matrix_exponential(case):
    exact = expm_cumulative_reward(case.model, case.reward, case.horizon)
    assert ctmc_cumulative_reward(case.model, case.reward, case.horizon) == pytest.approx(exact, rel=1e-6, abs=1e-12)


def test_two_state_availability_closed_form():
    # up-time of an on/off chain started down: a/(a+b) T - a/(a+b)^2 (1 - e^{-(a+b)T})
    a, b, T = 2.0, 0.5, 3.0
    m = MarkovModel(ModelKind.CTMC, ("down", "up"), ((0, 1, a), (1, 0, b)), 0, {}, {"up": RewardStructure({1: 1.0})})
    exact = a / (a + b) * T - a / (a + b) ** 2 * (1 - math.exp(-(a + b) * T))
    assert ctmc_cumulative_reward(m, "up", T) == pytest.approx(exact, rel=1e-6)


def test_sensor_rewards_are_linear_in_time():
    spec = SensorSpec("s", 5, 3, 10, 2, 0.93, 0.06)
    m = build_sensor_template(spec).instantiate({"r": 5.0, "sp": 2.0})
    T = 5.0
    assert ctmc_cumulative_reward(m, "measure", T) == pytest.approx(5.0 * spec.accuracy(2.0) * T, rel=1e-6)
    assert ctmc_cumulative_reward(m, "energy", T) == pytest.approx(5.0 * 3.0 * T, rel=1e-6)


@pytest.mark.parametrize("sp", [1.0, 2.6, 4.2])
@pytest.mark.parametrize("reward", ["measure", "energy"])
def test_independent_sum_matches_explicit_product(sp, reward):
    s1 = SensorSpec("s1", 5, 3, 10, 2, 0.93, 0.06)
    s2 = SensorSpec("s2", 4, 2.4, 8, 1.5, 0.93, 0.06)
    m1 = build_sensor_template(s1).instantiate({"r": 5.0, "sp": sp})
    m2 = build_sensor_template(s2).instantiate({"r": 4.0, "sp": sp})
    T = 10 / sp
    fast = build_independent_sum([m1, m2], reward).cumulative_reward(T)
    slow = ctmc_cumulative_reward(explicit_product(m1, m2, reward), reward, T)
    assert fast == pytest.approx(slow, rel=1e-6)


@pytest.mark.parametrize("switch_on", [True, False])
def test_switching_offset_matches_explicit_model(switch_on):
    spec = SensorSpec("s1", 5, 3, 10, 2, 0.93, 0.06)
    T = 4.0
    base = build_sensor_template(spec).instantiate({"r": 5.0, "sp": 2.0})
    scalar = (spec.e_on + ctmc_cumulative_reward(base, "energy", T)) if switch_on else spec.e_off
    # a fast switching transition approaches the scalar offset; the lag costs about e*r/switch_rate
    prev = None
    for rate in (1e2, 1e3, 1e4):
        explicit = ctmc_cumulative_reward(explicit_switching_model(spec, 5.0, 2.0, switch_on, rate), "energy", T)
        gap = abs(explicit - scalar)
        assert gap <= 5.0 * 3.0 / rate * 1.01 + 1e-6 * scalar
        if prev is not None:
            assert gap <= prev + 1e-9
        prev = gap


def test_unreachable_reward_target_diverges():
    m = MarkovModel(
        ModelKind.DTMC, ("a", "b", "c"), ((0, 1, 0.5), (0, 2, 0.5), (1, 1, 1.0), (2, 2, 1.0)), 0, {"b": frozenset({1})}, {"r": RewardStructure({0: 1.0})}
    )
    with pytest.raises(DivergentReward):
        dtmc_expected_reward(m, "r", "b")


def test_ctmc_without_transitions_accumulates_linearly():
    m = MarkovModel(ModelKind.CTMC, ("only",), (), 0, {}, {"r": RewardStructure({0: 2.0})})
    assert ctmc_cumulative_reward(m, "r", 3.5) == pytest.approx(7.0)


def test_huge_horizon_overflows_term_cap():
    m = MarkovModel(ModelKind.CTMC, ("a", "b"), ((0, 1, 1e3), (1, 0, 1e3)), 0, {}, {"r": RewardStructure({0: 1.0})})
    with pytest.raises(HorizonOverflow):
        ctmc_cumulative_reward(m, "r", 1e4, max_terms=10_000)


def test_property_kind_mismatch():
    ctmc = MarkovModel(ModelKind.CTMC, ("a", "b"), ((0, 1, 1.0),), 0, {"b": frozenset({1})}, {})
    with pytest.raises(IncompatibleProperty):
        evaluate(ctmc, ProbReach(Bound.GE, 0.5, "b"))


def test_evaluate_reports_value_and_verdict():
    m = MarkovModel(ModelKind.DTMC, ("a", "b", "c"), ((0, 1, 0.9), (0, 2, 0.1), (1, 1, 1.0), (2, 2, 1.0)), 0, {"b": frozenset({1})}, {})
    r = evaluate(m, ProbReach(Bound.GE, 0.9, "b", name="R1"))
    assert r.numeric_value == pytest.approx(0.9) and r.satisfied is True and r.name == "R1"
    r = evaluate(m, ProbReach(Bound.QUERY, None, "b"))
    assert r.satisfied is None


def test_fx_dtmc_against_monte_carlo(fx_app):
    factory = fx_app.model_factory(fx_app.initial_observations())
    config = next(c for c in fx_app.configurations() if str(c) == "{MW0, TA0, FA0, Al1, Or0, No1}")
    m = factory.instantiate(config)
    p, se = mc_dtmc(m, "done", None, n=200_000, seed=3)
    assert within_mc(dtmc_reach_probability(m, "done"), p, se)
    t, se = mc_dtmc(m, "end", "time", n=200_000, seed=4)
    assert within_mc(dtmc_expected_reward(m, "time", "end"), t, se)


@settings(max_examples=40)
@given(st.floats(0.01, 0.99), st.floats(0.0, 0.99))
def test_reach_probability_in_unit_interval(p, q):
    m = MarkovModel(
        ModelKind.DTMC,
        ("s", "t", "u", "v"),
        ((0, 1, p), (0, 2, 1 - p), (1, 0, q), (1, 3, 1 - q), (2, 2, 1.0), (3, 3, 1.0)),
        0,
        {"v": frozenset({3})},
        {},
    )
    x = dtmc_reach_probability(m, "v")
    assert 0.0 <= x <= 1.0
    assert x == pytest.approx(p * (1 - q) / (1 - p * q), abs=1e-12)


@settings(max_examples=25)
@given(st.floats(0.1, 5.0), st.floats(0.1, 5.0), st.floats(0.1, 3.0), st.floats(0.1, 3.0))
def test_cumulative_reward_monotone_in_horizon(a, b, t1, dt):
    m = MarkovModel(ModelKind.CTMC, ("x", "y"), ((0, 1, a), (1, 0, b)), 0, {}, {"r": RewardStructure({0: 1.0, 1: 0.5})})
    assert ctmc_cumulative_reward(m, "r", t1 + dt) >= ctmc_cumulative_reward(m, "r", t1) - 1e-9


class _Factory:
    def __init__(self, models):
        self.models = models

    def instantiate(self, c):
        if c == "boom":
            raise ValueError("cannot build")
        return self.models[c]


def _two_models():
    good = MarkovModel(ModelKind.DTMC, ("a", "b"), ((0, 1, 1.0), (1, 1, 1.0)), 0, {"b": frozenset({1})}, {})
    half = MarkovModel(ModelKind.DTMC, ("a", "b", "c"), ((0, 1, 0.5), (0, 2, 0.5), (1, 1, 1.0), (2, 2, 1.0)), 0, {"b": frozenset({1})}, {})
    return {"good": good, "half": half}


def test_batch_preserves_order_and_isolates_failures():
    props = [ProbReach(Bound.GE, 0.9, "b", name="R1")]
    out = verify_config_space(_Factory(_two_models()), ["half", "boom", "good"], props)
    assert [e.config for e in out.entries] == ["half", "boom", "good"]
    assert [e.feasible for e in out.entries] == [False, False, True]
    assert "ValueError" in out.entries[1].error
    assert [e.config for e in out.feasible] == ["good"]


def test_batch_digest_and_csv_are_reproducible():
    props = [ProbReach(Bound.GE, 0.9, "b", name="R1")]
    a = verify_config_space(_Factory(_two_models()), ["half", "good"], props)
    b = verify_config_space(_Factory(_two_models()), ["half", "good"], props)
    assert a.digest() == b.digest() and a.to_csv() == b.to_csv()
    header = a.to_csv().splitlines()[0].split(",")
    assert header[:2] == ["index", "config"] and header[-3:] == ["feasible", "error", "digest"]


def test_batch_deadline_returns_completed_prefix():
    props = [ProbReach(Bound.GE, 0.9, "b", name="R1")]
    t0 = time.monotonic()
    out = verify_config_space(_Factory(_two_models()), ["good"] * 50, props, 0.2, latency=lambda i: 0.05 if i >= 2 else 0.0)
    took = time.monotonic() - t0
    assert out.deadline_exceeded
    assert 2 <= len(out.entries) < 50
    assert took < 0.2 + 0.05


def test_zero_deadline_evaluates_nothing():
    props = [ProbReach(Bound.GE, 0.9, "b", name="R1")]
    out = verify_config_space(_Factory(_two_models()), ["good"], props, 0.0)
    assert out.deadline_exceeded and out.entries == []


def test_deadline_cancels_a_long_solve():
    m = MarkovModel(ModelKind.CTMC, ("a", "b"), ((0, 1, 50.0), (1, 0, 50.0)), 0, {}, {"r": RewardStructure({0: 1.0})})
    with pytest.raises(DeadlineExceeded):
        ctmc_cumulative_reward(m, "r", 1e4, deadline_at=time.monotonic() + 0.05)


def test_reach_reward_property_on_dtmc():
    m = MarkovModel(
        ModelKind.DTMC, ("a", "b"), ((0, 0, 0.5), (0, 1, 0.5), (1, 1, 1.0)), 0, {"b": frozenset({1})}, {"t": RewardStructure({0: 1.0})}
    )
    r = evaluate(m, ReachReward("t", Bound.LE, 2.0, "b", name="R2"))
    assert r.numeric_value == pytest.approx(2.0) and r.satisfied


def test_independent_sum_offsets():
    m = MarkovModel(ModelKind.CTMC, ("a", "b"), ((0, 1, 1.0), (1, 0, 1.0)), 0, {}, {"e": RewardStructure({0: 1.0, 1: 1.0})})
    s = build_independent_sum([m, m], "e", {"e": 7.0})
    assert s.cumulative_reward(2.0) == pytest.approx(2 * 2.0 + 7.0, rel=1e-6)
    r = evaluate(s, CumulReward("e", Bound.LE, 12.0, 2.0, name="R2"))
    assert r.satisfied is True
    assert np.isfinite(r.numeric_value)
