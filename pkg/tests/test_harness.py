from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest

from kipg import harness as H
from kipg.engine import Basis, PolicyModel
from kipg.features import parse_clause
from kipg.oracle import OracleError
from kipg.sim import ConfigError, EventSpec

SMALL = """
[experiment]
scenario = small
methods = Bayes, CFG, NoKI, BaselineCombined
budgets = 10, 20
seeds = 0-1
batch_size = 5
eval_states = 20
pass_threshold = 0.6

[city]
n_res = 1
n_homes_per_res = 2
n_persons_per_home = 2
route_map = r1-sh1
horizon = 8
initial_infected_fraction = 0.25
hospitalization_rate = 0.3

[oracle]
rule = hospitalized >= 1
target = sh1

[knowledge]
constraints = micro_combined.fc
baseline_combined = micro_contrast.fc
q_factor = false
free_point_rule = hold

[features]
clauses = micro.clauses
"""


@pytest.fixture(scope="module")
def small():
    cfg = H.config_from_text(SMALL)
    return cfg, H.build_scenario(cfg)


# configuration --------------------------------------------------------------------

def test_config_parsing(small):
    cfg, _ = small
    assert cfg.seeds == [0, 1]
    assert cfg.budgets == [10, 20]
    assert cfg.n_batches == 4
    assert cfg.city.route_map == (("r1", "sh1"),)
    assert [c.id for c in cfg.clauses] == [1, 3, 4, 5]
    soft, hard = cfg.knowledge_for("Bayes")
    assert hard == [] and all(c.mode == "soft" for c in soft)
    soft, hard = cfg.knowledge_for("CFG")
    assert soft == [] and all(c.mode == "hard" for c in hard)
    assert cfg.knowledge_for("NoKI") == ([], [])


@pytest.mark.parametrize("edit, field", [
    (("budgets = 10, 20", "budgets = 20, 10"), "budgets"),
    (("seeds = 0-1", "seeds = "), "seeds"),
    (("methods = Bayes, CFG, NoKI, BaselineCombined", "methods = Magic"), "methods"),
    (("route_map = r1-sh1", "route_map = r1-sh7"), "route_map"),
    (("rule = hospitalized >= 1", "rule = hospitalized >="), "oracle.rule"),
    (("budgets = 10, 20", "budgets = 10, 22"), "budgets"),
])
def test_config_errors_name_field(edit, field):
    text = SMALL.replace(*edit)
    with pytest.raises(ConfigError) as err:
        cfg = H.config_from_text(text)
        H.make_oracle(cfg)
    assert err.value.field == field


def test_method_aliases():
    assert H.canonical_method("w/o") == "NoKI"
    assert H.canonical_method("b-co") == "BaselineCombined"
    with pytest.raises(ConfigError):
        H.canonical_method("tree")


def test_bundled_configs_load():
    for name in ("micro", "events", "hotspot"):
        cfg = H.bundled_config(name)
        assert cfg.scenario == name
    assert H.bundled_config("events").events


# rollouts and evaluation ------------------------------------------------------------

def test_rollout_is_deterministic(small):
    cfg, sc = small
    model = H.initial_model(cfg, len(sc.clauses))
    a = H.rollout(cfg, sc.featurizer, 11, H.model_chooser(model, (1, 2)))
    b = H.rollout(cfg, sc.featurizer, 11, H.model_chooser(model, (1, 2)))
    assert a.actions == b.actions and a.rewards == b.rewards
    assert np.array_equal(a.features, b.features)
    assert a.features.shape == (cfg.city.horizon, len(sc.clauses))


def test_trajectory_records(small):
    cfg, sc = small
    ep = H.rollout(cfg, sc.featurizer, 3, H.oracle_chooser(sc.oracle, cfg.actions))
    lines = H.dumps_trajectory(ep, cfg.actions).splitlines()
    assert len(lines) == cfg.city.horizon
    rec = json.loads(lines[0])
    assert set(rec) == {"time", "action", "reward", "observed_positive_count"}
    assert rec["time"] == 0 and rec["action"] in cfg.actions


def test_eval_states_and_oracle_self_agreement(small):
    cfg, sc = small
    assert len(sc.eval_states) == cfg.n_eval
    for es in sc.eval_states:
        assert es.label == sc.oracle.decide(es.state, es.observation)


def _indicator_model(cfg, sc):
    """A model that locks exactly when the hospitalized clause is positive."""
    k = [c.id for c in sc.clauses].index(4)
    model = H.initial_model(cfg, len(sc.clauses))
    w = np.zeros(len(sc.clauses))
    w[k] = 100.0
    model.add_basis("lockshop(sh1)", Basis(w, -1.0))
    return model


def test_pass_rate_of_oracle_rule_is_one(small):
    cfg, sc = small
    # raw features: the hospitalized count is > 0 iff the oracle locks
    assert H.pass_rate(_indicator_model(cfg, sc), sc.eval_states, aggregation=False) == 1.0


def test_pass_rate_uniform_policy_matches_label_share(small):
    cfg, sc = small
    share = np.mean([es.label == cfg.actions[0] for es in sc.eval_states])
    assert H.pass_rate(H.initial_model(cfg, len(sc.clauses)), sc.eval_states) == share


def test_pass_rate_arithmetic_and_errors(small):
    cfg, sc = small
    states = [replace(es, label=cfg.actions[0] if i < 17 else cfg.actions[1])
              for i, es in enumerate(sc.eval_states[:20])]
    assert H.pass_rate(H.initial_model(cfg, len(sc.clauses)), states) == 0.85
    with pytest.raises(ValueError):
        H.pass_rate(H.initial_model(cfg, len(sc.clauses)), states[:19])
    bad = states[:-1] + [replace(states[-1], label=None, name="probe")]
    with pytest.raises(OracleError, match="probe"):
        H.pass_rate(H.initial_model(cfg, len(sc.clauses)), bad)


def test_time_to_threshold():
    assert H.time_to_threshold([0.2, 0.8, 0.9], 0.75) == 2
    assert H.time_to_threshold([0.2, 0.3], 0.75) is None
    assert H.time_to_threshold([0.0], 0.0) == 1


# training and reports ----------------------------------------------------------------

def test_training_is_reproducible(small):
    cfg, sc = small
    a = H.train(sc, "Bayes", 0)
    b = H.train(sc, "Bayes", 0)
    assert len(a.models) == cfg.n_batches
    X = np.vstack([es.features for es in sc.eval_states])
    assert all(np.array_equal(m.psi(X), n.psi(X)) for m, n in zip(a.models, b.models))


def test_lambda_zero_matches_noki(small):
    cfg, sc = small
    X = np.vstack([es.features for es in sc.eval_states])
    base = H.train(sc, "NoKI", 1).models[-1].psi(X)
    for method in ("Bayes", "CFG", "Combined", "Baseline"):
        assert np.array_equal(H.train(sc, method, 1, lambda_scale=0.0).models[-1].psi(X), base), method


def test_contrast_constraints_cancel(small):
    cfg, sc = small
    X = np.vstack([es.features for es in sc.eval_states])
    a = H.train(sc, "BaselineCombined", 0).models[-1].psi(X)
    b = H.train(sc, "NoKI", 0).models[-1].psi(X)
    assert np.array_equal(a, b)


def test_comparison_table(small):
    cfg, sc = small
    table = H.run_comparison(cfg, sc)
    assert len(table.rows) == len(cfg.methods) * len(cfg.budgets) * len(cfg.seeds)
    assert all(0.0 <= r["pass_rate"] <= 1.0 for r in table.rows)
    again = H.run_comparison(cfg, sc)
    assert again.deterministic_rows() == table.deterministic_rows()
    csv_text = table.to_csv(timing=False)
    assert csv_text.splitlines()[0] == "method,budget,seed,pass_rate,time_to_threshold"
    summary = table.summary(["method", "budget"])
    assert len(summary.rows) == len(cfg.methods) * len(cfg.budgets)


def test_ablation_difference_is_paired(small):
    cfg, _ = small
    cfg = replace(cfg, methods=["NoKI"], seeds=[0])
    table = H.run_ablation(cfg)
    for r in table.rows:
        assert r["difference"] == r["with_aggregation"] - r["without_aggregation"]
    off = replace(cfg, aggregation=False)
    a = H.run_comparison(off)
    b = H.run_comparison(off)
    assert a.deterministic_rows() == b.deterministic_rows()


def test_event_study(small):
    cfg, sc = small
    with pytest.raises(ConfigError):
        H.run_event_study(cfg, sc)
    ev = replace(cfg, events=[EventSpec(2, 2, "sh1", 0.5)], pass_threshold=0.0, seeds=[0],
                 event_lambdas=[0.5, 2.0])
    table = H.run_event_study(ev)
    assert [r["method"] for r in table.rows] == ["Bayes(lambda=0.5)", "Bayes(lambda=2)", "CFG"]
    assert all(r["time_to_threshold"] == 1 for r in table.rows)


def test_unreached_rows_print_marker():
    t = H.ReportTable("t", ["method", "time_to_threshold"])
    t.add(method="CFG", time_to_threshold=None)
    assert "unreached" in t.to_text()
    assert "unreached" in t.to_csv()


# interpretability -------------------------------------------------------------------

def _weights_model(weights):
    m = PolicyModel(["lockshop(sh1)", "unlockshop(sh1)"], len(weights))
    m.add_basis("lockshop(sh1)", Basis(np.asarray(weights, float), 0.0, step=0.5, output=2.0))
    return m


def test_single_weight_ranks_first():
    clauses = [parse_clause("sopen(State,Shop)", cid) for cid in (1, 3, 4)]
    rep = H.interpretability_report(_weights_model([0.0, 0.7, 0.0]), "lockshop", clauses, top=1)
    assert [cid for cid, _, _ in rep["ranking"]] == [3, 1, 4]
    assert rep["ranking"][0][1] == pytest.approx(0.7)
    assert rep["ranking"][1][1] == 0.0
    assert rep["top"][0][2] == "sopen(State,Shop)"


def test_ranking_ignores_sign():
    clauses = [parse_clause("sopen(State,Shop)", cid) for cid in (1, 2, 3)]
    w = [0.3, -0.9, 0.1]
    a = H.interpretability_report(_weights_model(w), "lockshop", clauses)["ranking"]
    b = H.interpretability_report(_weights_model([-v for v in w]), "lockshop", clauses)["ranking"]
    assert a == b


def test_agreement_over_states():
    clauses = [parse_clause("sopen(State,Shop)", cid) for cid in (1, 3, 4)]
    model = _weights_model([1.0, 1.0, 0.5])
    states = [H.EvalState(f"s{i}", None, None, np.array(x, float), np.array(x, float), "x")
              for i, x in enumerate([[1, 1, 1], [1, 0, 1], [0, 1, 1], [1, 1, 0]])]
    rep = H.interpretability_report(model, "lockshop", clauses, 2, states, (1, 3))
    assert rep["agreement"] == 0.5


def test_model_file_round_trip(tmp_path, small):
    cfg, sc = small
    model = H.train(sc, "Combined", 0).models[-1]
    path = tmp_path / "m.model"
    H.save_model(model, sc.clauses, path)
    back, clauses = H.load_model(path)
    assert clauses == sc.clauses
    X = np.vstack([es.features for es in sc.eval_states])
    assert np.array_equal(back.psi(X), model.psi(X))
