from __future__ import annotations

import dataclasses

import pytest

from conftest import micro_city
from kipg.sim import (DEAD, INFECTED, RECOVERED, SUSCEPTIBLE, Action, ActionKind, CityConfig,
                      ConfigError, EventSpec, SimulationError, SIRParams, init_city, inject_event,
                      observe, step)

NIL = Action(ActionKind.NilPolicy)


def _run(cfg, actions=None, events=()):
    state = init_city(cfg)
    for ev in events:
        state = inject_event(state, ev, cfg)
    out = [state]
    for t in range(cfg.horizon):
        a = actions[t] if actions else NIL
        state, _, _ = step(state, a, cfg)
        out.append(state)
    return out


def _n_infected_ever(state):
    return sum(p.sir_status != SUSCEPTIBLE for p in state.persons)


# init_city ---------------------------------------------------------------

def test_init_is_deterministic():
    cfg = CityConfig(seed=7, n_res=2, n_homes_per_res=3, n_persons_per_home=4)
    assert init_city(cfg) == init_city(cfg)


def test_init_seeds_two_percent_of_hundred():
    cfg = CityConfig(n_res=5, n_homes_per_res=5, n_persons_per_home=4, initial_infected_fraction=0.02)
    state = init_city(cfg)
    assert cfg.population == 100
    assert state.counts()[INFECTED] == 2
    assert not any(state.lock_flags.values())
    assert state.testing_rate == cfg.base_testing_rate


def test_init_seeds_at_least_one():
    state = init_city(micro_city(initial_infected_fraction=0.0))
    assert state.counts()[INFECTED] == 1


def test_route_to_undeclared_shop_names_route_map():
    with pytest.raises(ConfigError) as err:
        CityConfig(route_map=(("r1", "sh9"),))
    assert err.value.field == "route_map"


def test_invalid_rate_names_field():
    with pytest.raises(ConfigError) as err:
        CityConfig(base_testing_rate=1.5)
    assert err.value.field == "base_testing_rate"


# step ---------------------------------------------------------------------

def test_zero_beta_never_infects():
    cfg = micro_city(sir_params=SIRParams(0.0, 0.0, 0.0), horizon=20)
    for s in _run(cfg):
        assert _n_infected_ever(s) == 1


def test_all_locked_yields_no_infections():
    cfg = micro_city()
    state = init_city(cfg)
    for loc in list(state.lock_flags):
        state = dataclasses.replace(state, lock_flags={**state.lock_flags, loc: True})
    for _ in range(cfg.horizon):
        state, _, _ = step(state, NIL, cfg)
    assert _n_infected_ever(state) == 1


def test_one_infected_shopper_infects_the_other_three():
    # all four persons shop at sh1 (the only route is r1-sh1); with beta=1 each
    # susceptible meets the one infected person once and is infected for sure
    cfg = micro_city()
    state = init_city(cfg)
    assert state.counts()[INFECTED] == 1
    nxt, reward, _ = step(state, NIL, cfg)
    assert nxt.counts()[INFECTED] - state.counts()[INFECTED] == 3
    assert reward == 0.0


def test_locked_shop_blocks_the_only_venue():
    cfg = micro_city()
    nxt, _, _ = step(init_city(cfg), Action(ActionKind.LockShop, "sh1"), cfg)
    assert nxt.counts()[INFECTED] == 1


def test_step_past_horizon_rejected():
    cfg = micro_city(horizon=1)
    state, _, _ = step(init_city(cfg), NIL, cfg)
    with pytest.raises(SimulationError):
        step(state, NIL, cfg)


def test_undeclared_target_rejected():
    cfg = micro_city()
    with pytest.raises(SimulationError):
        step(init_city(cfg), Action(ActionKind.LockShop, "sh5"), cfg)


def test_action_needs_matching_target():
    with pytest.raises(ValueError):
        Action(ActionKind.LockShop)
    with pytest.raises(ValueError):
        Action(ActionKind.NilPolicy, "sh1")
    assert Action.parse("LockShop(sh1)") == Action(ActionKind.LockShop, "sh1")
    assert Action.parse("increasetesting").target is None


def test_increase_testing_adds_ten_points_capped():
    cfg = micro_city(base_testing_rate=0.95)
    state, _, _ = step(init_city(cfg), Action(ActionKind.IncreaseTesting), cfg)
    assert state.testing_rate == 1.0
    cfg = micro_city(base_testing_rate=0.3)
    state, _, _ = step(init_city(cfg), Action(ActionKind.IncreaseTesting), cfg)
    assert state.testing_rate == pytest.approx(0.4, abs=1e-12)


def test_reward_is_minus_new_deaths():
    cfg = micro_city(sir_params=SIRParams(0.5, 0.1, 0.3), horizon=30, n_persons_per_home=5)
    state = init_city(cfg)
    for _ in range(cfg.horizon):
        nxt, reward, _ = step(state, NIL, cfg)
        assert reward <= 0
        assert reward == -(nxt.deaths - state.deaths)
        state = nxt


def test_recovered_and_dead_are_absorbing():
    cfg = micro_city(sir_params=SIRParams(0.5, 0.3, 0.3), horizon=30)
    states = _run(cfg)
    for a, b in zip(states, states[1:]):
        for p, q in zip(a.persons, b.persons):
            if p.sir_status in (RECOVERED, DEAD):
                assert q.sir_status == p.sir_status


# events -------------------------------------------------------------------

def test_event_moves_two_susceptibles_to_an_infected():
    # routine mixing is off (the residence is locked); the event gathers all
    # three living persons at sh1, where one is infected, so beta=1 infects two
    cfg = micro_city(n_homes_per_res=1, n_persons_per_home=3, initial_infected_fraction=0.0)
    state = init_city(cfg)
    state = dataclasses.replace(state, lock_flags={**state.lock_flags, "r1": True})
    state = inject_event(state, EventSpec(0, 1, "sh1", 1.0), cfg)
    nxt, _, _ = step(state, NIL, cfg)
    assert nxt.counts()[INFECTED] - state.counts()[INFECTED] == 2


def test_locked_event_location_contributes_nothing():
    cfg = micro_city()
    state = init_city(cfg)
    state = dataclasses.replace(state, lock_flags={**state.lock_flags, "sh1": True})
    state = inject_event(state, EventSpec(0, 3, "sh1", 1.0), cfg)
    for _ in range(3):
        state, _, _ = step(state, NIL, cfg)
    assert state.counts()[INFECTED] == 1


def test_event_validation():
    cfg = micro_city()
    state = init_city(cfg)
    with pytest.raises(ConfigError):
        inject_event(state, EventSpec(0, 0, "sh1", 0.5), cfg)
    with pytest.raises(ConfigError):
        inject_event(state, EventSpec(8, 5, "sh1", 0.5), cfg)
    state = inject_event(state, EventSpec(2, 3, "sh1", 0.5), cfg)
    with pytest.raises(ConfigError):
        inject_event(state, EventSpec(4, 2, "sh1", 0.5), cfg)
    inject_event(state, EventSpec(5, 2, "sh1", 0.5), cfg)


# observe ------------------------------------------------------------------

def test_full_testing_observes_every_infection():
    cfg = micro_city(base_testing_rate=1.0, sir_params=SIRParams(0.5, 0.1, 0.0), horizon=15,
                     n_persons_per_home=4)
    state = init_city(cfg)
    for _ in range(cfg.horizon):
        state, _, obs = step(state, NIL, cfg)
        assert obs.observed_positive_count == state.cumulative_infections


def test_no_testing_observes_nothing():
    cfg = micro_city(base_testing_rate=0.0, horizon=15)
    state = init_city(cfg)
    for _ in range(cfg.horizon):
        state, _, obs = step(state, NIL, cfg)
        assert obs.observed_positive_count == 0
    assert state.cumulative_infections > 0


def test_sopen_mirrors_lock_flag():
    cfg = micro_city()
    state = init_city(cfg)
    assert observe(state, cfg).facts["sopen"] == frozenset({("sh1",)})
    state, _, obs = step(state, Action(ActionKind.LockShop, "sh1"), cfg)
    assert obs.facts["sopen"] == frozenset()
    state, _, obs = step(state, Action(ActionKind.UnlockShop, "sh1"), cfg)
    assert obs.facts["sopen"] == frozenset({("sh1",)})


def test_observation_references_declared_entities():
    cfg = CityConfig(n_res=2, n_shops=2, route_map=(("r1", "sh1"), ("r2", "sh2"), ("r1", "w1")))
    state = init_city(cfg)
    obs = observe(state, cfg)
    known = set(state.lock_flags) | {p.pid for p in state.persons}
    for pred, rows in obs.facts.items():
        for row in rows:
            assert set(row) <= known, (pred, row)


def test_observation_is_pure():
    cfg = micro_city()
    state = init_city(cfg)
    assert observe(state, cfg) == observe(state, cfg)
