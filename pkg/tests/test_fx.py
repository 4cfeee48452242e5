import itertools

import pytest
from hypothesis import given, settings, strategies as st

from oracles import fx_oracle
from selfadapt.fx import (
    NO_SVC,
    OPERATIONS,
    ChangeService,
    FxApplication,
    FxConfig,
    FxScenario,
    FxSimulator,
    ServiceSpec,
    UnknownService,
    WorkflowParams,
    apply_fx,
    build_fx_template,
    enumerate_fx_configs,
    fx_cost,
    load_fx_scenario,
    plan_fx,
)
from selfadapt.mape import Adapt, KnowledgeRepository, analyze
from selfadapt.verifier import dtmc_expected_reward, dtmc_reach_probability, evaluate

INDEX5 = ("MW0", "TA0", "FA0", "Al1", "Or0", "No1")


def _bind(params, **over):
    b = {"bypass_Or": 0.0}
    for s in ("MW", "TA", "FA", "Al", "Or", "No"):
        b.update({f"p_{s}": 1.0, f"time_{s}": 1.0, f"price_{s}": 1.0})
    b.update(over)
    return build_fx_template(params).instantiate(b)


def test_index_five_is_the_named_selection(fx_app):
    cs = fx_app.configurations()
    assert len(cs) == 64
    assert cs[5].services == INDEX5 and cs[5].index == 5


def test_index_bijection(fx_app):
    for k, c in enumerate(fx_app.configurations()):
        bits = "".join(s[-1] for s in c.services)
        assert int(bits, 2) == k == c.index
        assert fx_app.canonical(FxConfig(c.services)).index == k


def test_enumeration_sizes():
    one = {op: (ServiceSpec(op, f"{op}0", 1, 1, 1),) for op in OPERATIONS}
    assert len(enumerate_fx_configs(one)) == 1
    three = dict(one)
    for op in OPERATIONS:
        three[op] = (ServiceSpec(op, f"{op}0", 1, 1, 1), ServiceSpec(op, f"{op}1", 1, 1, 1))
    three["Alarm"] += (ServiceSpec("Alarm", "Alarm2", 1, 1, 1),)
    assert len(enumerate_fx_configs(three)) == 96
    with pytest.raises(ValueError):
        enumerate_fx_configs({**one, "Order": ()})


def test_table_binding(fx_app):
    b = fx_app.model_factory(fx_app.initial_observations()).bindings(fx_app.configurations()[5])
    assert (b["p_MW"], b["time_MW"], b["price_MW"]) == (0.976, 0.5, 5.0)


def test_perfect_services_always_complete():
    m = _bind(WorkflowParams())
    assert dtmc_reach_probability(m, "done") == pytest.approx(1.0, abs=1e-12)


def test_loop_free_time_closed_form():
    p = WorkflowParams(expert=0.3, ta_satisfied=1.0, ta_unsatisfied=0.0, ta_high_variance=0.0, fa_proceed=0.7)
    t = dict(MW=0.5, TA=1.1, FA=2.0, Al=9.0, Or=0.4, No=0.8)
    m = _bind(p, **{f"time_{k}": v for k, v in t.items()})
    exact = 0.3 * (t["MW"] + t["TA"] + t["Or"] + t["No"]) + 0.7 * (t["FA"] + 0.7 * (t["Or"] + t["No"]))
    assert dtmc_expected_reward(m, "time", "end") == pytest.approx(exact, abs=1e-9)


def test_bypass_excludes_order_price():
    with_order = _bind(WorkflowParams(), price_Or=50.0)
    bypass = _bind(WorkflowParams(), price_Or=50.0, bypass_Or=1.0)
    base = _bind(WorkflowParams(), price_Or=0.0, bypass_Or=1.0)
    assert dtmc_expected_reward(bypass, "price", "end") == pytest.approx(dtmc_expected_reward(base, "price", "end"))
    assert dtmc_expected_reward(with_order, "price", "end") > dtmc_expected_reward(bypass, "price", "end")


def test_unreliable_stub_breaks_r1(fx_app):
    obs = dict(fx_app.initial_observations(), p_MW0=0.5)
    c = fx_app.configurations()[5]
    r1 = fx_app.properties(c)[0]
    assert evaluate(fx_app.model_factory(obs).instantiate(c), r1).satisfied is False


def test_cost_and_requirement_thresholds(fx_app):
    assert fx_cost(60, 3, (1, 2)) == 66
    r1, r2, price = fx_app.properties(None)
    assert (r1.threshold, r2.threshold) == (0.9, 5.0)
    assert price.threshold is None


def test_workflow_params_validation():
    with pytest.raises(ValueError):
        WorkflowParams(ta_satisfied=0.5, ta_unsatisfied=0.5, ta_high_variance=0.5)
    with pytest.raises(ValueError):
        WorkflowParams(ta_satisfied=0.0, ta_unsatisfied=0.6, ta_high_variance=0.4)


def test_plan_apply_exhaustive(fx_app):
    cs = fx_app.configurations() + [fx_app.failsafe(c) for c in fx_app.configurations()[::7]]
    for c, t in itertools.product(cs, cs):
        assert fx_app.apply(plan_fx(c, t), c).services == t.services
    assert apply_fx([ChangeService("Order", NO_SVC)], cs[5]).service("Order") == NO_SVC


def test_initial_selection_matches_oracle(fx_app):
    k = KnowledgeRepository.for_app(fx_app)
    d = analyze(k)
    assert isinstance(d, Adapt) and d.target.services == INDEX5
    assert fx_oracle(fx_app, fx_app.initial_observations()).best.services == INDEX5


@settings(max_examples=20)
@given(st.sampled_from(["MW0", "MW1", "TA0", "TA1", "FA0", "FA1", "Or0", "Or1", "No0", "No1"]), st.floats(0.0, 0.99), st.integers(0, 63))
def test_lowering_reliability_never_helps_r1(fx_app, sid, factor, idx):
    obs = fx_app.initial_observations()
    c = fx_app.configurations()[idx]
    f0 = fx_app.model_factory(obs)
    f1 = fx_app.model_factory(dict(obs, **{f"p_{sid}": obs[f"p_{sid}"] * factor}))
    r1 = fx_app.properties(c)[0]
    before = evaluate(f0.instantiate(c), r1)
    after = evaluate(f1.instantiate(c), r1)
    assert after.numeric_value <= before.numeric_value + 1e-12
    if not before.satisfied:
        assert not after.satisfied


def test_simulator(fx_app):
    sim = FxSimulator(load_fx_scenario(), fx_app.registry, fx_app.initial_config())
    evs = list(sim.events())
    assert len(evs) == 7 and sum(bool(e.values) for e in evs) == 6
    sim.command(ChangeService("Order", NO_SVC))
    assert sim.config.service("Order") == NO_SVC
    with pytest.raises(UnknownService):
        sim.command(ChangeService("Order", "Or9"))
    with pytest.raises(UnknownService):
        sim.command(ChangeService("Alarm", NO_SVC))


def test_empty_fx_scenario(fx_app):
    sim = FxSimulator(FxScenario([]), fx_app.registry, fx_app.initial_config())
    before = sim.config
    assert list(sim.events()) == [] and sim.config == before


def test_service_spec_validation():
    with pytest.raises(ValueError):
        ServiceSpec("Order", "x", 1, 1.5, 1)
    with pytest.raises(ValueError):
        ServiceSpec("Shopping", "x", 1, 0.5, 1)
