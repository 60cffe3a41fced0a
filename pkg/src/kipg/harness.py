"""Experiment protocol: train each infusion method on simulator rollouts and
score the greedy policy against a reference oracle.

One *batch* is ``batch_size`` on-policy rollouts followed by one boosting
stage, so a trajectory budget of 20 with batches of 10 means two stages.
Every random draw is keyed by (seed, batch, rollout, step), which makes a
report a pure function of its configuration.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import engine, knowledge
from .aggregate import CountHistory, aggregate
from .engine import PolicyModel, Trajectory, greedy_action, make_samples, sample_action
from .features import (DEFAULT_SCHEMA, Clause, enumerate_clauses, featurize, load_clauses,
                       parse_clause, select_features)
from .knowledge import InfusionConfig, parse_constraints
from .oracle import OracleError, ScriptedOracle
from .sim import (Action, CityConfig, ConfigError, EventSpec, Observation, SIRParams, WorldState,
                  init_city, inject_event, observe, step, validate_action)

METHODS = ("Bayes", "CFG", "Combined", "NoKI", "Baseline", "BaselineCombined")
_METHOD_ALIASES = {m.lower(): m for m in METHODS}
_METHOD_ALIASES.update({"w/o": "NoKI", "without": "NoKI", "co": "Combined", "b": "Baseline",
                        "b-co": "BaselineCombined", "bayesian": "Bayes"})

SCENARIO_DIR = Path(__file__).parent / "scenarios"

_SALT_ROLLOUT = 7001
_SALT_ACTION = 7002
_SALT_FIT = 7003
_SALT_EVAL = 7004
_SALT_SELECT = 7005


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _parse_list(text: str) -> list[str]:
    return [t.strip() for t in text.replace(";", ",").split(",") if t.strip()]


def _parse_seeds(text: str) -> list[int]:
    seeds = []
    for tok in _parse_list(text):
        if "-" in tok[1:]:
            lo, hi = tok.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(tok))
    return seeds


def _parse_bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def canonical_method(name: str) -> str:
    m = _METHOD_ALIASES.get(name.strip().lower())
    if m is None:
        raise ConfigError("methods", f"unknown method {name!r}; expected one of {', '.join(METHODS)}")
    return m


@dataclass
class OracleConfig:
    rule: str = "hospitalized >= 1"
    on_true: str = "lockshop(sh1)"
    on_false: str = "unlockshop(sh1)"
    target: str | None = "sh1"


@dataclass
class ExperimentConfig:
    scenario: str = "experiment"
    city: CityConfig = field(default_factory=CityConfig)
    actions: list[str] = field(default_factory=lambda: ["lockshop(sh1)", "unlockshop(sh1)"])
    oracle: OracleConfig = field(default_factory=OracleConfig)
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    budgets: list[int] = field(default_factory=lambda: [20, 50, 100])
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    aggregation: bool = True
    rho: float = 0.9
    mu_mode: str = "current"
    kernel_reference: str = "previous"
    batch_size: int = 10
    n_eval: int = 100
    eval_seed: int = 1000
    pass_threshold: float = 0.75
    discount: float = 0.9
    eta: float = 0.5
    subsample: float = 0.7
    refine_epochs: int = 0
    lambda_scale: float = 1.0
    event_lambdas: list[float] = field(default_factory=lambda: [0.5, 1.0, 2.0])
    constraints: list = field(default_factory=list)          # Bayes, CFG, Baseline
    combined_constraints: list | None = None                 # Combined (declared modes)
    baseline_combined: list = field(default_factory=list)    # BaselineCombined
    q_factor: bool = True
    free_point_rule: str = "vertex"
    hard_path: str = "lp"
    gamma0: float = 2.0
    omega_box: float | None = None
    clauses: list | None = None                              # fixed feature set
    max_len: int = 4
    mi_threshold: float = 0.01
    feature_budget: int = 12
    selection_rollouts: int = 10
    events: list = field(default_factory=list)
    explain_action: str | None = None
    explain_reference: tuple = ()
    explain_method: str = "Combined"
    source: Path | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.seeds:
            raise ConfigError("seeds", "need at least one seed")
        if any(b <= 0 for b in self.budgets):
            raise ConfigError("budgets", "budgets must be positive")
        if list(self.budgets) != sorted(set(self.budgets)):
            raise ConfigError("budgets", "budgets must be strictly ascending")
        if self.batch_size <= 0:
            raise ConfigError("batch_size", "must be positive")
        if any(b % self.batch_size for b in self.budgets):
            raise ConfigError("budgets", f"every budget must be a multiple of batch_size={self.batch_size}")
        self.methods = [canonical_method(m) for m in self.methods]
        self.explain_method = canonical_method(self.explain_method)
        if self.n_eval < 20:
            raise ConfigError("eval_states", "need at least 20 evaluation states")
        if not 0.0 <= self.pass_threshold <= 1.0:
            raise ConfigError("pass_threshold", "must lie in [0, 1]")
        if self.free_point_rule not in knowledge.FREE_POINT_RULES:
            raise ConfigError("free_point_rule", f"must be one of {knowledge.FREE_POINT_RULES}")
        if self.hard_path not in ("lp", "lagrangian"):
            raise ConfigError("hard_path", "must be lp or lagrangian")
        if self.lambda_scale < 0:
            raise ConfigError("lambda_scale", "must be >= 0")
        if len(self.actions) < 2:
            raise ConfigError("actions", "need at least two actions")
        for label in self.actions:
            try:
                validate_action(Action.parse(label), self.city)
            except Exception as exc:
                raise ConfigError("actions", str(exc)) from None
        for label in (self.oracle.on_true, self.oracle.on_false):
            if label not in self.actions:
                raise ConfigError("oracle", f"oracle action {label!r} is not in the action set")

    @property
    def n_batches(self) -> int:
        return self.budgets[-1] // self.batch_size

    def knowledge_for(self, method: str) -> tuple[list, list]:
        """(soft, hard) constraint lists a method infuses.

        Bayes infuses every constraint softly and CFG imposes every constraint
        as hard; only Combined honours the declared mode of each line.
        """
        if method == "Bayes":
            return [replace(c, mode="soft") for c in self.constraints], []
        if method == "CFG":
            return [], [replace(c, mode="hard") for c in self.constraints]
        if method == "Combined":
            fcs = self.constraints if self.combined_constraints is None else self.combined_constraints
            return ([c for c in fcs if c.mode == "soft"], [c for c in fcs if c.mode == "hard"])
        if method == "Baseline":
            return list(self.constraints), []
        if method == "BaselineCombined":
            return list(self.baseline_combined), []
        return [], []


def _read_text(base: Path | None, name: str) -> str:
    path = Path(name)
    if not path.is_absolute():
        for root in ([base] if base else []) + [SCENARIO_DIR]:
            if (root / path).exists():
                path = root / path
                break
    try:
        return path.read_text()
    except OSError as exc:
        raise ConfigError("file", f"cannot read {name}: {exc.strerror}") from None


def _load_constraints(base, name) -> list:
    try:
        return parse_constraints(_read_text(base, name))
    except knowledge.ConstraintSyntaxError as exc:
        raise ConfigError("constraints", f"{name}: {exc}") from None


def _parse_routes(text: str) -> tuple:
    routes = []
    for tok in _parse_list(text):
        a, _, b = tok.partition("-")
        if not b:
            raise ConfigError("city.route_map", f"route {tok!r} must look like r1-sh1")
        routes.append((a.strip(), b.strip()))
    return tuple(routes)


def config_from_text(text: str, base: Path | None = None, source: Path | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("file", str(exc).splitlines()[0]) from None
    try:
        return _build_config(cp, base, source)
    except ConfigError:
        raise
    except (ValueError, KeyError) as exc:
        raise ConfigError("file", str(exc)) from None


def _build_config(cp: configparser.ConfigParser, base, source) -> ExperimentConfig:
    kw: dict = {"source": source}
    ex = cp["experiment"] if cp.has_section("experiment") else {}
    getters = {
        "scenario": str, "aggregation": _parse_bool, "rho": float, "mu_mode": str,
        "kernel_reference": str, "batch_size": int, "eval_states": int, "eval_seed": int,
        "pass_threshold": float, "discount": float, "eta": float, "subsample": float,
        "refine_epochs": int, "lambda_scale": float,
    }
    for key, conv in getters.items():
        if key in ex:
            kw["n_eval" if key == "eval_states" else key] = conv(ex[key])
    if "methods" in ex:
        kw["methods"] = _parse_list(ex["methods"])
    if "budgets" in ex:
        kw["budgets"] = [int(b) for b in _parse_list(ex["budgets"])]
    if "seeds" in ex:
        kw["seeds"] = _parse_seeds(ex["seeds"])
    if "event_lambdas" in ex:
        kw["event_lambdas"] = [float(v) for v in _parse_list(ex["event_lambdas"])]
    if "actions" in ex:
        kw["actions"] = _parse_list(ex["actions"])

    if cp.has_section("city"):
        c = cp["city"]
        city_kw: dict = {}
        for key in ("n_res", "n_homes_per_res", "n_persons_per_home", "n_shops", "n_workplaces",
                    "n_hospitals", "horizon"):
            if key in c:
                city_kw[key] = int(c[key])
        for key in ("base_testing_rate", "initial_infected_fraction", "hospitalization_rate",
                    "hospital_capacity_fraction"):
            if key in c:
                city_kw[key] = float(c[key])
        if "route_map" in c:
            city_kw["route_map"] = _parse_routes(c["route_map"])
        sir = SIRParams(beta_transmission=float(c.get("beta_transmission", 0.3)),
                        gamma_recovery=float(c.get("gamma_recovery", 0.1)),
                        mortality=float(c.get("mortality", 0.02)))
        kw["city"] = CityConfig(sir_params=sir, **city_kw)

    if cp.has_section("oracle"):
        o = cp["oracle"]
        kw["oracle"] = OracleConfig(rule=o.get("rule", "hospitalized >= 1"),
                                    on_true=o.get("on_true", "lockshop(sh1)"),
                                    on_false=o.get("on_false", "unlockshop(sh1)"),
                                    target=o.get("target") or None)

    if cp.has_section("knowledge"):
        k = cp["knowledge"]
        if "constraints" in k:
            kw["constraints"] = _load_constraints(base, k["constraints"])
        if "combined" in k:
            kw["combined_constraints"] = _load_constraints(base, k["combined"])
        if "baseline_combined" in k:
            kw["baseline_combined"] = _load_constraints(base, k["baseline_combined"])
        if "q_factor" in k:
            kw["q_factor"] = _parse_bool(k["q_factor"])
        for key, conv in (("free_point_rule", str), ("hard_path", str), ("gamma0", float),
                          ("omega_box", float)):
            if key in k:
                kw[key] = conv(k[key])

    if cp.has_section("features"):
        f = cp["features"]
        if "clauses" in f:
            kw["clauses"] = load_clauses(_read_text(base, f["clauses"]))
        for key, conv in (("max_len", int), ("mi_threshold", float), ("budget", int),
                          ("selection_rollouts", int)):
            if key in f:
                kw["feature_budget" if key == "budget" else key] = conv(f[key])

    events = []
    for section in cp.sections():
        if section.startswith("event"):
            e = cp[section]
            events.append(EventSpec(start_step=int(e["start_step"]), duration=int(e["duration"]),
                                    location=e["location"].strip(),
                                    participant_fraction=float(e.get("participant_fraction", 0.5)),
                                    description=e.get("description", section)))
    kw["events"] = events

    if cp.has_section("explain"):
        x = cp["explain"]
        kw["explain_action"] = x.get("action")
        if "method" in x:
            kw["explain_method"] = x["method"].strip()
        if "reference" in x:
            kw["explain_reference"] = tuple(int(v) for v in _parse_list(x["reference"]))
    return ExperimentConfig(**kw)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        for cand in (SCENARIO_DIR / path, SCENARIO_DIR / f"{path}.cfg"):
            if cand.exists():
                path = cand
                break
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("file", f"cannot read {path}: {exc.strerror}") from None
    return config_from_text(text, base=path.parent, source=path)


def bundled_config(name: str) -> ExperimentConfig:
    return load_config(SCENARIO_DIR / f"{name}.cfg")


# ---------------------------------------------------------------------------
# rollouts
# ---------------------------------------------------------------------------

class Featurizer:
    """Clause counts per observation, memoized on the observation's facts."""

    def __init__(self, clauses: Sequence[Clause]):
        self.clauses = list(clauses)
        self._memo: dict = {}

    def __call__(self, obs: Observation) -> np.ndarray:
        key = tuple(sorted(obs.facts.items()))
        hit = self._memo.get(key)
        if hit is None:
            hit = featurize(obs, self.clauses).astype(float)
            self._memo[key] = hit
        return hit


@dataclass
class Episode:
    observations: list
    states: list
    actions: list
    rewards: list
    features: np.ndarray          # aggregated
    features_raw: np.ndarray      # aggregation off (mu_T only)

    def trajectory(self, aggregation: bool, horizon: int | None = None) -> Trajectory:
        X = self.features if aggregation else self.features_raw
        return Trajectory(observations=self.observations, actions=self.actions,
                          rewards=self.rewards, features=list(X), horizon=horizon)


def trajectory_records(episode: Episode, actions: Sequence[str]) -> list[dict]:
    """One record per step: time, action label, reward and detected-positive count."""
    return [{"time": int(obs.time), "action": actions[a], "reward": float(r),
             "observed_positive_count": int(obs.observed_positive_count)}
            for obs, a, r in zip(episode.observations, episode.actions, episode.rewards)]


def dumps_trajectory(episode: Episode, actions: Sequence[str]) -> str:
    return "".join(json.dumps(rec) + "\n" for rec in trajectory_records(episode, actions))


Chooser = Callable[[int, np.ndarray, Observation, WorldState], int]


def _key(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def rollout(cfg: ExperimentConfig, featurizer: Featurizer, city_seed: int, choose: Chooser) -> Episode:
    city = cfg.city.with_seed(city_seed)
    state = init_city(city)
    for ev in cfg.events:
        state = inject_event(state, ev, city)
    obs = observe(state, city)
    actions = [Action.parse(a) for a in cfg.actions]
    history = CountHistory(len(featurizer.clauses))
    on, off, observations, states, taken, rewards = [], [], [], [], [], []
    for t in range(city.horizon):
        history.append(featurizer(obs))
        x_on = aggregate(history, cfg.rho, cfg.mu_mode, True, cfg.kernel_reference).values
        x_off = aggregate(history, cfg.rho, cfg.mu_mode, False, cfg.kernel_reference).values
        x = x_on if cfg.aggregation else x_off
        a = choose(t, x, obs, state)
        observations.append(obs)
        states.append(state)
        on.append(x_on)
        off.append(x_off)
        taken.append(a)
        state, reward, obs = step(state, actions[a], city)
        rewards.append(reward)
    d = len(featurizer.clauses)
    return Episode(observations, states, taken, rewards,
                   np.array(on).reshape(len(taken), d), np.array(off).reshape(len(taken), d))


def model_chooser(model: PolicyModel, key_parts: tuple) -> Chooser:
    def choose(t, x, obs, state):
        return sample_action(model, x, [*key_parts, t])
    return choose


def oracle_chooser(oracle: ScriptedOracle, actions: Sequence[str]) -> Chooser:
    index = {a: i for i, a in enumerate(actions)}

    def choose(t, x, obs, state):
        return index[oracle.decide(state, obs)]
    return choose


# ---------------------------------------------------------------------------
# scenario assembly
# ---------------------------------------------------------------------------

@dataclass
class EvalState:
    name: str
    observation: Observation
    state: WorldState
    features: np.ndarray
    features_raw: np.ndarray
    label: str | None


@dataclass
class Scenario:
    config: ExperimentConfig
    oracle: ScriptedOracle
    clauses: list
    featurizer: Featurizer
    eval_states: list

    @property
    def actions(self) -> list[str]:
        return self.config.actions


def make_oracle(cfg: ExperimentConfig) -> ScriptedOracle:
    try:
        return ScriptedOracle(cfg.oracle.rule, cfg.oracle.on_true, cfg.oracle.on_false,
                              cfg.oracle.target)
    except OracleError as exc:
        raise ConfigError("oracle.rule", str(exc)) from None


def oracle_episodes(cfg: ExperimentConfig, oracle: ScriptedOracle, featurizer: Featurizer,
                    n_rollouts: int, salt: int) -> list[Episode]:
    choose = oracle_chooser(oracle, cfg.actions)
    return [rollout(cfg, featurizer, _key(salt, cfg.eval_seed, j), choose) for j in range(n_rollouts)]


def choose_features(cfg: ExperimentConfig, oracle: ScriptedOracle) -> list:
    if cfg.clauses is not None:
        return list(cfg.clauses)
    # uniform-policy rollouts, so the oracle's own lock decisions do not leak
    # into the next observation and inflate the information of lock-state clauses
    candidates = enumerate_clauses(DEFAULT_SCHEMA, max_len=cfg.max_len)
    probe = Featurizer([])
    data = []
    for j in range(cfg.selection_rollouts):
        choose = model_chooser(initial_model(cfg, 0), (_SALT_SELECT, cfg.eval_seed, j))
        ep = rollout(cfg, probe, _key(_SALT_SELECT, cfg.eval_seed, j),
                     lambda t, x, o, s: choose(t, np.zeros(0), o, s))
        for obs, st in zip(ep.observations, ep.states):
            data.append((obs, oracle.decide(st, obs)))
    return select_features(candidates, data, cfg.mi_threshold, cfg.feature_budget)


def build_eval_states(cfg: ExperimentConfig, oracle: ScriptedOracle, featurizer: Featurizer) -> list:
    """``n_eval`` states spread evenly over oracle-policy rollouts at fixed seeds."""
    per = cfg.city.horizon
    n_roll = 2 * max(1, math.ceil(cfg.n_eval / per))
    pool = []
    for j, ep in enumerate(oracle_episodes(cfg, oracle, featurizer, n_roll, _SALT_EVAL)):
        for t in range(len(ep.actions)):
            pool.append(EvalState(name=f"rollout{j}/t{t}", observation=ep.observations[t],
                                  state=ep.states[t], features=ep.features[t],
                                  features_raw=ep.features_raw[t],
                                  label=oracle.decide(ep.states[t], ep.observations[t])))
    idx = np.unique(np.linspace(0, len(pool) - 1, cfg.n_eval).round().astype(int))
    return [pool[i] for i in idx]


def build_scenario(cfg: ExperimentConfig) -> Scenario:
    oracle = make_oracle(cfg)
    clauses = choose_features(cfg, oracle)
    featurizer = Featurizer(clauses)
    return Scenario(cfg, oracle, clauses, featurizer, build_eval_states(cfg, oracle, featurizer))


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def pass_rate(model: PolicyModel, eval_states: Sequence[EvalState], aggregation: bool = True) -> float:
    """Fraction of evaluation states where the greedy action equals the oracle's."""
    if len(eval_states) < 20:
        raise ValueError(f"need at least 20 evaluation states, got {len(eval_states)}")
    hits = 0
    for es in eval_states:
        if es.label is None or es.label not in model.actions:
            raise OracleError(f"oracle undefined on evaluation state {es.name}")
        x = es.features if aggregation else es.features_raw
        hits += model.actions[greedy_action(model, x)] == es.label
    return hits / len(eval_states)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def initial_model(cfg: ExperimentConfig, n_features: int) -> PolicyModel:
    return PolicyModel(actions=list(cfg.actions), n_features=n_features)


def stage(cfg: ExperimentConfig, method: str, model: PolicyModel, samples, rng,
          lambda_scale: float | None = None) -> PolicyModel:
    """One boosting stage of ``method`` on ``samples``."""
    lam = cfg.lambda_scale if lambda_scale is None else lambda_scale
    inf = InfusionConfig(lambda_scale=lam, q_factor=cfg.q_factor, gamma0=cfg.gamma0,
                         omega_box=cfg.omega_box)
    soft, hard = cfg.knowledge_for(method)
    kw = dict(eta=cfg.eta, rng=rng, subsample=cfg.subsample)
    if method == "NoKI":
        return engine.boost(model, samples, engine.base_gradient, **kw)
    if method == "Bayes":
        return engine.boost(model, samples, knowledge.soft_gradient_fn(model.actions, soft, inf), **kw)
    if method in ("Baseline", "BaselineCombined"):
        alpha = lam * (float(np.mean([c.alpha for c in soft])) if soft else 0.0)
        fn = knowledge.baseline_gradient_fn(model.actions, soft, alpha, cfg.q_factor)
        return engine.boost(model, samples, fn, **kw)
    if method == "CFG" and cfg.hard_path == "lagrangian":
        return engine.boost(model, samples, knowledge.lagrangian_gradient_fn(model.actions, hard, lam), **kw)
    if method == "CFG":
        model = engine.boost(model, samples, engine.base_gradient, **kw)
        if lam == 0:
            return model
        return knowledge.cfg_stage(model, samples, hard, inf.gamma(model.stages), inf.omega_box,
                                   cfg.free_point_rule)
    if method == "Combined":
        if lam == 0:
            hard = []
        return knowledge.combined_stage(model, samples, soft, hard, inf, rng, cfg.eta, cfg.subsample,
                                        cfg.free_point_rule)
    raise ConfigError("methods", f"unknown method {method!r}")


@dataclass
class TrainingRun:
    method: str
    seed: int
    models: list            # model after each batch (index 0 = after batch 1)
    last_samples: list
    wall_clock: float

    def model_at(self, budget: int, batch_size: int) -> PolicyModel:
        return self.models[budget // batch_size - 1]


def train(sc: Scenario, method: str, seed: int, lambda_scale: float | None = None,
          n_batches: int | None = None) -> TrainingRun:
    cfg = sc.config
    n_batches = cfg.n_batches if n_batches is None else n_batches
    model = initial_model(cfg, len(sc.clauses))
    models, samples = [], []
    start = time.perf_counter()
    for b in range(1, n_batches + 1):
        trajs = []
        for i in range(cfg.batch_size):
            ep = rollout(cfg, sc.featurizer, _key(_SALT_ROLLOUT, seed, b, i),
                         model_chooser(model, (_SALT_ACTION, seed, b, i)))
            trajs.append(ep.trajectory(cfg.aggregation, cfg.city.horizon))
        samples = make_samples(model, trajs, cfg.discount)
        rng = np.random.default_rng([_SALT_FIT, seed, b])
        model = stage(cfg, method, model, samples, rng, lambda_scale)
        models.append(model)
    return TrainingRun(method, seed, models, samples, time.perf_counter() - start)


def evaluated_model(cfg: ExperimentConfig, run: TrainingRun, batch: int) -> PolicyModel:
    model = run.models[batch - 1]
    if cfg.refine_epochs > 0 and model.n_bases > 0:
        model = engine.refine_network(model, run.last_samples, cfg.refine_epochs)
    return model


def time_to_threshold(rates: Sequence[float], threshold: float) -> int | None:
    """First 1-based batch index whose pass rate reaches ``threshold``."""
    for i, r in enumerate(rates, start=1):
        if r >= threshold:
            return i
    return None


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

TIMING_COLUMNS = ("wall_clock",)


@dataclass
class ReportTable:
    title: str
    columns: list[str]
    rows: list[dict] = field(default_factory=list)

    def add(self, **row) -> None:
        self.rows.append(row)

    def _fmt(self, value) -> str:
        if value is None:
            return "unreached"
        if isinstance(value, float):
            return f"{value:.4f}"
        return str(value)

    def to_csv(self, timing: bool = True) -> str:
        cols = [c for c in self.columns if timing or c not in TIMING_COLUMNS]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([self._fmt(r.get(c)) for c in cols])
        return buf.getvalue()

    def to_text(self, timing: bool = True) -> str:
        cols = [c for c in self.columns if timing or c not in TIMING_COLUMNS]
        cells = [cols] + [[self._fmt(r.get(c)) for c in cols] for r in self.rows]
        widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
        lines = [self.title] if self.title else []
        for k, row in enumerate(cells):
            lines.append("  ".join(v.rjust(widths[i]) if k else v.ljust(widths[i])
                                   for i, v in enumerate(row)).rstrip())
            if k == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"

    def deterministic_rows(self) -> list[dict]:
        return [{k: v for k, v in r.items() if k not in TIMING_COLUMNS} for r in self.rows]

    def summary(self, by: Sequence[str], value: str = "pass_rate") -> "ReportTable":
        """Mean and standard deviation of ``value`` grouped by ``by`` (first-seen order)."""
        groups: dict = {}
        for r in self.rows:
            groups.setdefault(tuple(r[k] for k in by), []).append(r[value])
        out = ReportTable(f"{self.title} (mean over seeds)", list(by) + ["n", "mean", "sd"])
        for key, vals in groups.items():
            reached = [v for v in vals if v is not None]
            mean = float(np.mean(reached)) if reached else None
            sd = float(np.std(reached)) if reached else None
            out.add(**dict(zip(by, key)), n=len(vals), mean=mean, sd=sd)
        return out

    def mean(self, value: str = "pass_rate", **where) -> float:
        vals = [r[value] for r in self.rows if all(r.get(k) == v for k, v in where.items())]
        if not vals:
            raise KeyError(f"no rows match {where}")
        return float(np.mean(vals))


def run_comparison(cfg: ExperimentConfig, scenario: Scenario | None = None) -> ReportTable:
    sc = scenario or build_scenario(cfg)
    table = ReportTable(f"comparison: {cfg.scenario}",
                        ["method", "budget", "seed", "pass_rate", "time_to_threshold", "wall_clock"])
    for method in cfg.methods:
        for seed in cfg.seeds:
            run = train(sc, method, seed)
            rates = [pass_rate(evaluated_model(cfg, run, b), sc.eval_states, cfg.aggregation)
                     for b in range(1, cfg.n_batches + 1)]
            ttt = time_to_threshold(rates, cfg.pass_threshold)
            for budget in cfg.budgets:
                table.add(method=method, budget=budget, seed=seed,
                          pass_rate=rates[budget // cfg.batch_size - 1], time_to_threshold=ttt,
                          wall_clock=round(run.wall_clock, 3))
    return table


def run_ablation(cfg: ExperimentConfig) -> ReportTable:
    """Paired aggregation on/off runs; ``difference`` is on minus off for the same seed."""
    arms = {}
    for flag in (True, False):
        arm_cfg = replace(cfg, aggregation=flag)
        arms[flag] = (arm_cfg, build_scenario(arm_cfg))
    table = ReportTable(f"aggregation ablation: {cfg.scenario}",
                        ["method", "budget", "seed", "with_aggregation", "without_aggregation",
                         "difference"])
    for method in cfg.methods:
        for seed in cfg.seeds:
            rates = {}
            for flag, (arm_cfg, sc) in arms.items():
                run = train(sc, method, seed)
                rates[flag] = {b: pass_rate(evaluated_model(arm_cfg, run, b // cfg.batch_size),
                                            sc.eval_states, flag) for b in cfg.budgets}
            for b in cfg.budgets:
                table.add(method=method, budget=b, seed=seed, with_aggregation=rates[True][b],
                          without_aggregation=rates[False][b],
                          difference=rates[True][b] - rates[False][b])
    return table


def event_arms(cfg: ExperimentConfig) -> list[tuple[str, str, float]]:
    arms = [(f"Bayes(lambda={lam:g})", "Bayes", lam) for lam in cfg.event_lambdas]
    arms.append(("CFG", "CFG", cfg.lambda_scale))
    return arms


def run_event_study(cfg: ExperimentConfig, scenario: Scenario | None = None) -> ReportTable:
    if not cfg.events:
        raise ConfigError("events", "the event study needs at least one [event.*] section")
    sc = scenario or build_scenario(cfg)
    table = ReportTable(f"event study: {cfg.scenario}",
                        ["method", "lambda_scale", "seed", "time_to_threshold", "final_pass_rate",
                         "wall_clock"])
    for name, method, lam in event_arms(cfg):
        for seed in cfg.seeds:
            run = train(sc, method, seed, lambda_scale=lam)
            rates = [pass_rate(evaluated_model(cfg, run, b), sc.eval_states, cfg.aggregation)
                     for b in range(1, cfg.n_batches + 1)]
            table.add(method=name, lambda_scale=lam, seed=seed,
                      time_to_threshold=time_to_threshold(rates, cfg.pass_threshold),
                      final_pass_rate=rates[-1], wall_clock=round(run.wall_clock, 3))
    return table


# ---------------------------------------------------------------------------
# interpretability
# ---------------------------------------------------------------------------

def input_weights(model: PolicyModel, action: str) -> np.ndarray:
    """Per-feature sum over hidden units of |output weight| * |effective input weight|."""
    total = np.zeros(model.n_features)
    for b in model.bases.get(action, []):
        total += abs(b.output) * np.abs(b.step * b.weights)
    return total


def resolve_action(model: PolicyModel, action: str) -> str:
    if action in model.actions:
        return action
    hits = [a for a in model.actions if a.split("(")[0] == action.lower()]
    if len(hits) != 1:
        raise KeyError(f"action {action!r} matches {len(hits)} model actions")
    return hits[0]


def rank_features(weights: np.ndarray, clause_ids: Sequence[int]) -> list[tuple[int, float]]:
    order = sorted(range(len(weights)), key=lambda k: (-weights[k], clause_ids[k]))
    return [(clause_ids[k], float(weights[k])) for k in order]


def interpretability_report(model: PolicyModel, action: str, clauses: Sequence[Clause], top: int = 2,
                            eval_states: Sequence[EvalState] | None = None,
                            reference: Sequence[int] | None = None, aggregation: bool = True) -> dict:
    """Ranked input-layer weights for ``action`` plus the per-state top-N agreement rate.

    Per state the score of feature k is its global weight times |x_k|, i.e.
    the magnitude it actually contributes to the potential in that state.
    """
    action = resolve_action(model, action)
    ids = [c.id for c in clauses]
    texts = {c.id: str(c) for c in clauses}
    w = input_weights(model, action)
    ranking = [(cid, wt, texts[cid]) for cid, wt in rank_features(w, ids)]
    out = {"action": action, "ranking": ranking, "top": ranking[:top], "agreement": None}
    if eval_states and reference is not None:
        ref = set(reference)
        hits = 0
        for es in eval_states:
            x = es.features if aggregation else es.features_raw
            per_state = rank_features(w * np.abs(x), ids)[:top]
            hits += {cid for cid, _ in per_state} == ref
        out["agreement"] = hits / len(eval_states)
    return out


def run_interpretability(cfg: ExperimentConfig, scenario: Scenario | None = None) -> ReportTable:
    """Per seed, the top-N clauses of the final model and the eval-state agreement rate."""
    if not cfg.explain_action:
        raise ConfigError("explain", "no [explain] action configured")
    sc = scenario or build_scenario(cfg)
    top = max(1, len(cfg.explain_reference)) if cfg.explain_reference else 2
    table = ReportTable(f"input-layer weights: {cfg.scenario}",
                        ["method", "seed", "top", "agreement", "wall_clock"])
    for seed in cfg.seeds:
        run = train(sc, cfg.explain_method, seed)
        model = evaluated_model(cfg, run, cfg.n_batches)
        rep = interpretability_report(model, cfg.explain_action, sc.clauses, top, sc.eval_states,
                                      cfg.explain_reference or None, cfg.aggregation)
        table.add(method=cfg.explain_method, seed=seed,
                  top=" ".join(str(cid) for cid, _, _ in rep["top"]),
                  agreement=rep["agreement"], wall_clock=run.wall_clock)
    return table


def save_model(model: PolicyModel, clauses: Sequence[Clause], path) -> None:
    header = "".join(f"# clause {c.id} {c}\n" for c in clauses)
    Path(path).write_text(header + engine.dumps_model(model))


def load_model(path) -> tuple[PolicyModel, list[Clause]]:
    text = Path(path).read_text()
    clauses = []
    for line in text.splitlines():
        if line.startswith("# clause "):
            _, _, cid, body = line.split(" ", 3)
            clauses.append(parse_clause(body, int(cid)))
    return engine.loads_model(text), clauses
