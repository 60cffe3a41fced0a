from __future__ import annotations

import dataclasses

import pytest

from conftest import micro_city
from kipg.oracle import OracleError, ScriptedOracle, quantities
from kipg.sim import Action, ActionKind, init_city, observe, step


def _world():
    cfg = micro_city()
    state = init_city(cfg)
    return cfg, state, observe(state, cfg)


def test_quantities_reflect_state():
    cfg, state, obs = _world()
    q = quantities(state, obs, "sh1")
    assert q["infected"] == 1.0
    assert q["susceptible"] == 3.0
    assert q["sopen"] == 1.0
    assert q["locked"] == 0.0
    assert q["interaction"] == 4.0          # all four persons live on the route to sh1
    assert q["time"] == 0.0
    assert quantities(state, obs)["interaction"] == 0.0


def test_lock_flag_and_hidden_infections():
    cfg, state, _ = _world()
    state, _, obs = step(state, Action(ActionKind.LockShop, "sh1"), cfg)
    q = quantities(state, obs, "sh1")
    assert q["locked"] == 1.0
    assert q["sopen"] == 0.0
    assert q["hidden_infected"] == q["infected"]


def test_rule_decisions():
    cfg, state, obs = _world()
    oracle = ScriptedOracle("infected >= 1 and not locked", "lockshop(sh1)", "unlockshop(sh1)", "sh1")
    assert oracle.holds(state, obs)
    assert oracle.decide(state, obs) == "lockshop(sh1)"
    calm = dataclasses.replace(state, persons=tuple(dataclasses.replace(p, sir_status="S")
                                                    for p in state.persons))
    assert oracle.decide(calm, observe(calm, cfg)) == "unlockshop(sh1)"
    assert oracle.actions == ("lockshop(sh1)", "unlockshop(sh1)")


def test_arithmetic_and_chained_comparisons():
    cfg, state, obs = _world()
    assert ScriptedOracle("0 < infected * 2 - 1 <= 1", "a", "b").holds(state, obs)
    assert ScriptedOracle("-susceptible / 3 == -1", "a", "b").holds(state, obs)
    assert not ScriptedOracle("infected > 1 or dead > 0", "a", "b").holds(state, obs)


def test_bad_rules_rejected():
    with pytest.raises(OracleError):
        ScriptedOracle("infected >=", "a", "b")
    cfg, state, obs = _world()
    with pytest.raises(OracleError):
        ScriptedOracle("zombies > 0", "a", "b").holds(state, obs)
    with pytest.raises(OracleError):
        ScriptedOracle("__import__('os')", "a", "b").holds(state, obs)
