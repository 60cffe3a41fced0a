"""Agent-based pandemic simulator for a small notional city.

Persons live in homes grouped into residential areas and travel along routes
to a shop and a workplace.  Disease spread follows an SIR model extended with
death, hospitalization and testing/quarantine.  Every stochastic draw comes
from a counter-based generator keyed by ``(seed, time, stream)`` and indexed
by person, so ``step`` is a pure function of its inputs and trajectories are
bit-reproducible.
"""

from __future__ import annotations

import dataclasses
import math
import zlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

import numpy as np

SUSCEPTIBLE = "S"
INFECTED = "I"
RECOVERED = "R"
DEAD = "Dead"

# random streams; distinct per purpose so draws never alias
_STREAM_INIT = 0
_STREAM_INFECT = 1
_STREAM_TEST = 2
_STREAM_PROGRESS = 3
_STREAM_HOSPITAL = 4
_STREAM_EVENT = 5

TESTING_INCREMENT = 0.10

# location kinds in the order used to canonicalize route endpoints
RES, SHOP, WORK, HOME, ROUTE, HOSPITAL = "Res", "Shop", "Work", "Home", "Route", "Hospital"
_ROUTE_ENDPOINT_ORDER = {RES: 0, SHOP: 1, WORK: 2}


class ConfigError(ValueError):
    """Invalid simulator or experiment configuration; ``field`` names the culprit."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SIRParams:
    beta_transmission: float = 0.3
    gamma_recovery: float = 0.1
    mortality: float = 0.02


@dataclass(frozen=True)
class CityConfig:
    n_res: int = 1
    n_homes_per_res: int = 2
    n_persons_per_home: int = 2
    n_shops: int = 1
    n_workplaces: int = 1
    n_hospitals: int = 1
    route_map: tuple[tuple[str, str], ...] = (("r1", "sh1"),)
    sir_params: SIRParams = field(default_factory=SIRParams)
    base_testing_rate: float = 0.1
    horizon: int = 50
    seed: int = 0
    initial_infected_fraction: float = 0.02
    hospitalization_rate: float = 0.1
    hospital_capacity_fraction: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "route_map", tuple(tuple(p) for p in self.route_map))
        validate_config(self)

    @property
    def population(self) -> int:
        return self.n_res * self.n_homes_per_res * self.n_persons_per_home

    def with_seed(self, seed: int) -> "CityConfig":
        return dataclasses.replace(self, seed=int(seed))


def res_ids(cfg: CityConfig) -> list[str]:
    return [f"r{i + 1}" for i in range(cfg.n_res)]


def home_ids(cfg: CityConfig) -> list[str]:
    return [f"h{i + 1}" for i in range(cfg.n_res * cfg.n_homes_per_res)]


def shop_ids(cfg: CityConfig) -> list[str]:
    return [f"sh{i + 1}" for i in range(cfg.n_shops)]


def work_ids(cfg: CityConfig) -> list[str]:
    return [f"w{i + 1}" for i in range(cfg.n_workplaces)]


def hospital_ids(cfg: CityConfig) -> list[str]:
    return [f"hp{i + 1}" for i in range(cfg.n_hospitals)]


def route_ids(cfg: CityConfig) -> list[str]:
    return [f"rt{i + 1}" for i in range(len(cfg.route_map))]


def location_kinds(cfg: CityConfig) -> dict[str, str]:
    kinds = {}
    for kind, ids in ((RES, res_ids(cfg)), (HOME, home_ids(cfg)), (SHOP, shop_ids(cfg)),
                      (WORK, work_ids(cfg)), (HOSPITAL, hospital_ids(cfg)),
                      (ROUTE, route_ids(cfg))):
        for loc in ids:
            kinds[loc] = kind
    return kinds


def lockable_locations(cfg: CityConfig) -> list[str]:
    return home_ids(cfg) + res_ids(cfg) + shop_ids(cfg) + work_ids(cfg) + route_ids(cfg)


def validate_config(cfg: CityConfig) -> None:
    for name in ("n_res", "n_homes_per_res", "n_persons_per_home", "n_shops",
                 "n_workplaces", "n_hospitals", "horizon"):
        value = getattr(cfg, name)
        if not isinstance(value, (int, np.integer)) or value < 1:
            raise ConfigError(name, f"must be an integer >= 1, got {value!r}")
    for name in ("beta_transmission", "gamma_recovery", "mortality"):
        value = getattr(cfg.sir_params, name)
        if not 0.0 <= value <= 1.0:
            raise ConfigError(f"sir_params.{name}", f"must lie in [0, 1], got {value!r}")
    if cfg.sir_params.gamma_recovery + cfg.sir_params.mortality > 1.0:
        raise ConfigError("sir_params", "gamma_recovery + mortality must not exceed 1")
    for name in ("base_testing_rate", "initial_infected_fraction", "hospitalization_rate",
                 "hospital_capacity_fraction"):
        value = getattr(cfg, name)
        if not 0.0 <= value <= 1.0:
            raise ConfigError(name, f"must lie in [0, 1], got {value!r}")
    # location_kinds needs route ids, which only depend on len(route_map)
    kinds = {loc: k for loc, k in location_kinds(cfg).items() if k != ROUTE}
    for pair in cfg.route_map:
        if len(pair) != 2:
            raise ConfigError("route_map", f"entry {pair!r} is not a pair")
        for loc in pair:
            if loc not in kinds:
                raise ConfigError("route_map", f"undeclared location id {loc!r}")
            if kinds[loc] not in _ROUTE_ENDPOINT_ORDER:
                raise ConfigError("route_map", f"{loc!r} is a {kinds[loc]}; routes join Res/Shop/Work")
        if kinds[pair[0]] == kinds[pair[1]]:
            raise ConfigError("route_map", f"route {pair!r} joins two locations of the same kind")


def canonical_routes(cfg: CityConfig) -> list[tuple[str, str, str]]:
    """(route id, a, b) with endpoints ordered Res < Shop < Work."""
    kinds = location_kinds(cfg)
    out = []
    for rid, (a, b) in zip(route_ids(cfg), cfg.route_map):
        if _ROUTE_ENDPOINT_ORDER[kinds[a]] > _ROUTE_ENDPOINT_ORDER[kinds[b]]:
            a, b = b, a
        out.append((rid, a, b))
    return out


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Person:
    pid: str
    home: str
    res: str
    workplace: str
    sir_status: str = SUSCEPTIBLE
    hospitalized: bool = False
    quarantined: bool = False
    tested_positive: bool = False

    @property
    def alive(self) -> bool:
        return self.sir_status != DEAD


@dataclass(frozen=True)
class EventSpec:
    start_step: int
    duration: int
    location: str
    participant_fraction: float
    description: str = ""

    def active(self, t: int) -> bool:
        return self.start_step <= t < self.start_step + self.duration


@dataclass(frozen=True)
class WorldState:
    time: int
    persons: tuple[Person, ...]
    lock_flags: dict
    testing_rate: float
    event_overrides: tuple[EventSpec, ...] = ()

    def counts(self) -> dict[str, int]:
        out = {SUSCEPTIBLE: 0, INFECTED: 0, RECOVERED: 0, DEAD: 0}
        for p in self.persons:
            out[p.sir_status] += 1
        return out

    @property
    def deaths(self) -> int:
        return sum(1 for p in self.persons if p.sir_status == DEAD)

    @property
    def cumulative_infections(self) -> int:
        return sum(1 for p in self.persons if p.sir_status != SUSCEPTIBLE)

    @property
    def cumulative_detected(self) -> int:
        return sum(1 for p in self.persons if p.tested_positive)


class ActionKind(Enum):
    LockShop = "lockshop"
    UnlockShop = "unlockshop"
    LockRes = "lockres"
    UnlockRes = "unlockres"
    LockWork = "lockwork"
    UnlockWork = "unlockwork"
    LockHome = "lockhome"
    UnlockHome = "unlockhome"
    LockRoute = "lockroute"
    UnlockRoute = "unlockroute"
    IncreaseTesting = "increasetesting"
    NilPolicy = "nilpolicy"


_TARGET_KIND = {
    ActionKind.LockShop: SHOP, ActionKind.UnlockShop: SHOP,
    ActionKind.LockRes: RES, ActionKind.UnlockRes: RES,
    ActionKind.LockWork: WORK, ActionKind.UnlockWork: WORK,
    ActionKind.LockHome: HOME, ActionKind.UnlockHome: HOME,
    ActionKind.LockRoute: ROUTE, ActionKind.UnlockRoute: ROUTE,
}


def target_kind(kind: ActionKind) -> str | None:
    return _TARGET_KIND.get(kind)


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    target: str | None = None

    def __post_init__(self):
        needs = _TARGET_KIND.get(self.kind)
        if needs is None and self.target is not None:
            raise ValueError(f"{self.kind.value} takes no target")
        if needs is not None and self.target is None:
            raise ValueError(f"{self.kind.value} requires a {needs} target")

    @property
    def label(self) -> str:
        return self.kind.value if self.target is None else f"{self.kind.value}({self.target})"

    def __str__(self):
        return self.label

    @classmethod
    def parse(cls, label: str) -> "Action":
        label = label.strip()
        if "(" in label:
            name, rest = label.split("(", 1)
            target = rest.rstrip(")").strip() or None
        else:
            name, target = label, None
        try:
            kind = ActionKind(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown action {name!r}") from None
        return cls(kind, target)


def validate_action(action: Action, cfg: CityConfig) -> None:
    needs = _TARGET_KIND.get(action.kind)
    if needs is None:
        return
    kind = location_kinds(cfg).get(action.target)
    if kind is None:
        raise SimulationError(f"{action.label}: undeclared location {action.target!r}")
    if kind != needs:
        raise SimulationError(f"{action.label}: target is a {kind}, expected {needs}")


# ---------------------------------------------------------------------------
# randomness
# ---------------------------------------------------------------------------

def _uniforms(seed: int, time: int, stream: int, n: int, salt: int = 0) -> np.ndarray:
    """n uniforms keyed by (seed, time, stream, salt); entry i belongs to person i."""
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, int(time), int(stream), int(salt)])
    return rng.random(n)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def init_city(config: CityConfig) -> WorldState:
    validate_config(config)
    homes = home_ids(config)
    works = work_ids(config)
    persons = []
    k = 0
    for h_idx, home in enumerate(homes):
        res = f"r{h_idx // config.n_homes_per_res + 1}"
        for _ in range(config.n_persons_per_home):
            persons.append(Person(pid=f"p{k + 1}", home=home, res=res,
                                  workplace=works[k % len(works)]))
            k += 1
    n = len(persons)
    n_seed = min(n, max(1, _round_half_up(config.initial_infected_fraction * n)))
    order = np.argsort(_uniforms(config.seed, 0, _STREAM_INIT, n), kind="stable")
    seeded = set(int(i) for i in order[:n_seed])
    persons = [dataclasses.replace(p, sir_status=INFECTED) if i in seeded else p
               for i, p in enumerate(persons)]
    return WorldState(
        time=0,
        persons=tuple(persons),
        lock_flags={loc: False for loc in lockable_locations(config)},
        testing_rate=float(config.base_testing_rate),
        event_overrides=(),
    )


def apply_action(state: WorldState, action: Action, config: CityConfig) -> WorldState:
    validate_action(action, config)
    kind = action.kind
    if kind is ActionKind.NilPolicy:
        return state
    if kind is ActionKind.IncreaseTesting:
        rate = min(1.0, round(state.testing_rate + TESTING_INCREMENT, 12))
        return dataclasses.replace(state, testing_rate=rate)
    flags = dict(state.lock_flags)
    flags[action.target] = kind.value.startswith("lock")
    return dataclasses.replace(state, lock_flags=flags)


def routine_venues(state: WorldState, config: CityConfig) -> dict[int, list[str]]:
    """Venues each mobile person visits this step, ignoring events."""
    locked = state.lock_flags
    shops_by_res: dict[str, list[tuple[str, str]]] = {}
    route_between: dict[tuple[str, str], str] = {}
    for rid, a, b in canonical_routes(config):
        route_between[(a, b)] = rid
        route_between[(b, a)] = rid
        if a.startswith("r") and b.startswith("sh"):
            shops_by_res.setdefault(a, []).append((b, rid))
    visits: dict[int, list[str]] = {}
    for i, p in enumerate(state.persons):
        if not p.alive or p.hospitalized or p.quarantined:
            continue
        if locked[p.home] or locked[p.res]:
            continue
        venues = []
        options = shops_by_res.get(p.res, [])
        if options:
            shop, rid = options[i % len(options)]
            if not locked[shop] and not locked[rid]:
                venues.append(shop)
        rid = route_between.get((p.res, p.workplace))
        if rid is not None and not locked[rid] and not locked[p.workplace]:
            venues.append(p.workplace)
        if venues:
            visits[i] = venues
    return visits


def _event_participants(state: WorldState, event: EventSpec, config: CityConfig) -> list[int]:
    eligible = [i for i, p in enumerate(state.persons) if p.alive and not p.hospitalized]
    if not eligible:
        return []
    n_take = min(len(eligible), max(1, _round_half_up(event.participant_fraction * len(eligible))))
    salt = zlib.crc32(event.location.encode())
    u = _uniforms(config.seed, state.time, _STREAM_EVENT, len(state.persons), salt)
    ranked = sorted(eligible, key=lambda i: (u[i], i))
    return sorted(ranked[:n_take])


def gatherings(state: WorldState, config: CityConfig) -> dict[str, list[int]]:
    """Persons present at each open venue during the current step."""
    visits = routine_venues(state, config)
    for event in state.event_overrides:
        if not event.active(state.time):
            continue
        participants = _event_participants(state, event, config)
        if state.lock_flags.get(event.location, False):
            # participants abandon their routine but the gathering is suppressed
            for i in participants:
                visits.pop(i, None)
            continue
        for i in participants:
            visits[i] = [event.location]
    present: dict[str, list[int]] = {}
    for i, venues in visits.items():
        for v in venues:
            present.setdefault(v, []).append(i)
    return {v: sorted(set(ps)) for v, ps in present.items()}


def infectious_contacts(state: WorldState, config: CityConfig) -> np.ndarray:
    """Number of infected persons each person met this step (pairwise venue contacts)."""
    n = len(state.persons)
    contacts = np.zeros(n, dtype=np.int64)
    infected = np.array([p.sir_status == INFECTED for p in state.persons])
    for members in gatherings(state, config).values():
        idx = np.asarray(members)
        n_inf = int(infected[idx].sum())
        if n_inf == 0:
            continue
        contacts[idx] += n_inf - infected[idx].astype(np.int64)
    return contacts


def hospital_capacity(config: CityConfig) -> int:
    return max(1, math.ceil(config.hospital_capacity_fraction * config.population))


def step(state: WorldState, action: Action, config: CityConfig):
    """Advance one step.  Returns ``(next_state, reward, observation)``."""
    if state.time >= config.horizon:
        raise SimulationError(f"cannot step past horizon {config.horizon} (time={state.time})")
    state = apply_action(state, action, config)
    n = len(state.persons)
    t = state.time
    sir = config.sir_params
    persons = list(state.persons)

    # transmission: 1 - (1 - beta)^k for k infectious contacts
    contacts = infectious_contacts(state, config)
    u_inf = _uniforms(config.seed, t, _STREAM_INFECT, n)
    p_inf = 1.0 - (1.0 - sir.beta_transmission) ** contacts
    was_infected = [p.sir_status == INFECTED for p in persons]
    for i, p in enumerate(persons):
        if p.sir_status == SUSCEPTIBLE and contacts[i] > 0 and u_inf[i] < p_inf[i]:
            persons[i] = dataclasses.replace(p, sir_status=INFECTED)

    # testing covers everyone infected this step, including new cases
    u_test = _uniforms(config.seed, t, _STREAM_TEST, n)
    for i, p in enumerate(persons):
        if p.sir_status == INFECTED and not p.tested_positive and u_test[i] < state.testing_rate:
            persons[i] = dataclasses.replace(p, tested_positive=True, quarantined=True)

    # progression only for persons infectious at the start of the step
    u_prog = _uniforms(config.seed, t, _STREAM_PROGRESS, n)
    new_deaths = 0
    for i, p in enumerate(persons):
        if not was_infected[i]:
            continue
        if u_prog[i] < sir.gamma_recovery:
            persons[i] = dataclasses.replace(p, sir_status=RECOVERED, hospitalized=False,
                                             quarantined=False)
        elif u_prog[i] < sir.gamma_recovery + sir.mortality:
            persons[i] = dataclasses.replace(p, sir_status=DEAD, hospitalized=False,
                                             quarantined=False)
            new_deaths += 1

    capacity = hospital_capacity(config)
    occupied = sum(1 for p in persons if p.hospitalized)
    u_hosp = _uniforms(config.seed, t, _STREAM_HOSPITAL, n)
    for i, p in enumerate(persons):
        if occupied >= capacity:
            break
        if p.sir_status == INFECTED and not p.hospitalized and u_hosp[i] < config.hospitalization_rate:
            persons[i] = dataclasses.replace(p, hospitalized=True)
            occupied += 1

    nxt = dataclasses.replace(state, time=t + 1, persons=tuple(persons))
    return nxt, float(-new_deaths), observe(nxt, config)


def inject_event(state: WorldState, event: EventSpec, config: CityConfig) -> WorldState:
    if event.duration < 1:
        raise ConfigError("event.duration", f"must be >= 1, got {event.duration}")
    if event.start_step < 0:
        raise ConfigError("event.start_step", "must be >= 0")
    if event.start_step + event.duration > config.horizon:
        raise ConfigError("event", "start_step + duration exceeds the horizon")
    if not 0.0 < event.participant_fraction <= 1.0:
        raise ConfigError("event.participant_fraction", "must lie in (0, 1]")
    if event.location not in location_kinds(config):
        raise ConfigError("event.location", f"undeclared location {event.location!r}")
    for other in state.event_overrides:
        if other.location != event.location:
            continue
        if (event.start_step < other.start_step + other.duration
                and other.start_step < event.start_step + event.duration):
            raise ConfigError("event", f"overlaps an existing event at {event.location}")
    return dataclasses.replace(state, event_overrides=state.event_overrides + (event,))


# ---------------------------------------------------------------------------
# observation
# ---------------------------------------------------------------------------

PREDICATES = ("same", "pin", "hin", "sopen", "ropen", "wopen", "hopen", "hospitalized",
              "quarantined")


@dataclass(frozen=True)
class Observation:
    """What the policy sees.

    ``facts`` maps each predicate to a set of argument tuples with the leading
    State argument dropped (every fact belongs to this observation's state).
    """
    time: int
    facts: dict
    observed_positive_count: int
    lock_flags: dict

    def count(self, predicate: str) -> int:
        return len(self.facts.get(predicate, ()))

    def literals(self) -> Iterable[str]:
        for pred in PREDICATES:
            for args in sorted(self.facts.get(pred, ())):
                yield f"{pred}(s{self.time},{','.join(args)})"


def observe(state: WorldState, config: CityConfig) -> Observation:
    flags = state.lock_flags
    facts: dict[str, set] = {p: set() for p in PREDICATES}
    for rid, a, b in canonical_routes(config):
        if not flags[rid]:
            facts["same"].add((a, b))
    for h_idx, home in enumerate(home_ids(config)):
        facts["hin"].add((home, f"r{h_idx // config.n_homes_per_res + 1}"))
    for p in state.persons:
        if p.alive and not p.hospitalized:
            facts["pin"].add((p.pid, p.home))
        if p.hospitalized:
            facts["hospitalized"].add((p.pid,))
        if p.quarantined:
            facts["quarantined"].add((p.pid,))
    for pred, ids in (("sopen", shop_ids(config)), ("ropen", res_ids(config)),
                      ("wopen", work_ids(config)), ("hopen", home_ids(config))):
        for loc in ids:
            if not flags[loc]:
                facts[pred].add((loc,))
    return Observation(
        time=state.time,
        facts={k: frozenset(v) for k, v in facts.items()},
        observed_positive_count=state.cumulative_detected,
        lock_flags=dict(flags),
    )


def ground_actions(config: CityConfig, kinds: Iterable[str] | None = None) -> list[Action]:
    """Every ground action of the city, optionally restricted to some kinds."""
    wanted = None if kinds is None else {k.lower() for k in kinds}
    targets = {SHOP: shop_ids(config), RES: res_ids(config), WORK: work_ids(config),
               HOME: home_ids(config), ROUTE: route_ids(config)}
    out = []
    for kind in ActionKind:
        if wanted is not None and kind.value not in wanted:
            continue
        needs = _TARGET_KIND.get(kind)
        if needs is None:
            out.append(Action(kind))
        else:
            out.extend(Action(kind, loc) for loc in targets[needs])
    return out
