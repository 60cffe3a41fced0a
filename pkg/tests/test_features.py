from __future__ import annotations

import numpy as np
import pytest

from kipg.features import (DEFAULT_SCHEMA, Clause, ModeDeclaration, canonical_key, count_groundings,
                           dump_clauses, enumerate_clauses, featurize, is_connected, load_clauses,
                           mutual_information, parse_clause, select_features)

ID1 = "same(State,Res,Shop) ^ pin(State,Person,Home) ^ hin(State,Home,Res)"
ID2 = "same(State,Shop,Work) ^ pin(State,Person,Home) ^ hin(State,Home,Res) ^ same(State,Res,Work)"
ID3 = "sopen(State,Shop)"

WORLD = {"same": {("r1", "sh1")}, "hin": {("h1", "r1")}, "pin": {("p1", "h1"), ("p2", "h1")}}


def test_single_predicate_schema():
    out = enumerate_clauses(DEFAULT_SCHEMA.restrict(["sopen"]), max_len=1)
    assert [str(c) for c in out] == ["sopen(State,Shop)"]


def test_one_clause_per_predicate_at_length_one():
    out = enumerate_clauses(DEFAULT_SCHEMA, max_len=1)
    assert len(out) == 9
    assert sorted(c.literals[0].pred for c in out) == sorted(DEFAULT_SCHEMA.names)


def test_table_clauses_are_enumerated():
    keys = {c.canonical() for c in enumerate_clauses(DEFAULT_SCHEMA, max_len=4)}
    for text in (ID1, ID2, ID3):
        assert parse_clause(text).canonical() in keys, text


def test_enumeration_is_connected_and_duplicate_free():
    out = enumerate_clauses(DEFAULT_SCHEMA, max_len=3)
    keys = [c.canonical() for c in out]
    assert len(keys) == len(set(keys))
    assert all(is_connected(c.literals) for c in out)
    assert [c.id for c in out] == list(range(1, len(out) + 1))
    assert out == enumerate_clauses(DEFAULT_SCHEMA, max_len=3)


def test_input_mode_requires_reuse():
    modes = ModeDeclaration.parse(["modeb(*, pin(+State,-Person,+Home))"])
    out = enumerate_clauses(DEFAULT_SCHEMA.restrict(["pin", "hin"]), modes, max_len=2)
    for c in out:
        for k, lit in enumerate(c.literals):
            if lit.pred == "pin":
                earlier = {a for l in c.literals[:k] for a in l.args}
                assert lit.args[2] in earlier


def test_max_len_must_be_positive():
    with pytest.raises(ValueError):
        enumerate_clauses(DEFAULT_SCHEMA, max_len=0)


def test_canonical_key_ignores_renaming_and_order():
    a = parse_clause("pin(State,P,H) ^ hin(State,H,R)")
    b = parse_clause("hin(State,Home,Res) ^ pin(State,Person,Home)")
    assert canonical_key(a.literals) == canonical_key(b.literals)


# counting -------------------------------------------------------------------

def test_locked_shop_counts_zero():
    assert count_groundings({"sopen": set()}, parse_clause(ID3)) == 0


def test_interaction_clause_counts_two_bindings():
    # bindings: (r1, sh1, p1, h1) and (r1, sh1, p2, h1)
    assert count_groundings(WORLD, parse_clause(ID1)) == 2


def test_unrelated_fact_leaves_count():
    world = dict(WORLD, quarantined={("p9",)})
    assert count_groundings(world, parse_clause(ID1)) == 2


def test_binding_restricts_count():
    world = {"sopen": {("sh1",), ("sh2",)}}
    assert count_groundings(world, parse_clause(ID3)) == 2
    assert count_groundings(world, parse_clause(ID3), {"Shop": "sh2"}) == 1
    assert count_groundings(world, parse_clause(ID3), {"Shop": "sh9"}) == 0


def test_featurize():
    assert featurize(WORLD, []).shape == (0,)
    assert featurize(WORLD, [parse_clause(ID1, 1)]).tolist() == [2]
    twins = [parse_clause(ID1, 1), parse_clause(ID1, 7)]
    v = featurize(WORLD, twins)
    assert v[0] == v[1] == 2


# selection ----------------------------------------------------------------

def test_plugin_mutual_information_on_contingency_table():
    # counts: (1,a)=3 (1,b)=1 (0,a)=1 (0,b)=3; H(X)+H(Y)-H(X,Y) computed separately
    xs = [1, 1, 1, 1, 0, 0, 0, 0]
    ys = ["a", "a", "a", "b", "a", "b", "b", "b"]
    assert mutual_information(xs, ys) == pytest.approx(0.1308120359411371, abs=1e-12)


def _labeled(pairs):
    return [({"sopen": {("sh1",)} if open_ else set(), "pin": {("p1", "h1")}}, label)
            for open_, label in pairs]


def test_constant_clause_is_dropped_and_perfect_clause_kept():
    data = _labeled([(True, "a"), (True, "a"), (False, "b"), (False, "b")])
    sopen = parse_clause(ID3, 3)
    pin = parse_clause("pin(State,Person,Home)", 4)
    assert select_features([sopen, pin], data, 0.01) == [sopen]
    assert mutual_information([1, 1, 0, 0], ["a", "a", "b", "b"]) == pytest.approx(np.log(2))


def test_selection_budget_and_ties():
    data = _labeled([(True, "a"), (False, "b")])
    clauses = [parse_clause(ID3, i) for i in (5, 2, 9)]
    assert [c.id for c in select_features(clauses, data, 0.0, budget=2)] == [2, 5]


def test_selection_is_order_invariant():
    data = _labeled([(True, "a"), (True, "b"), (False, "b"), (True, "a"), (False, "a")])
    clauses = enumerate_clauses(DEFAULT_SCHEMA, max_len=1)
    assert select_features(clauses, data, 0.0) == select_features(clauses, data[::-1], 0.0)


def test_selection_rejects_empty_data():
    with pytest.raises(ValueError):
        select_features([parse_clause(ID3)], [], 0.01)


def test_clause_file_round_trip():
    clauses = [parse_clause(ID1, 1), parse_clause(ID3, 3), parse_clause(ID2, 2)]
    text = dump_clauses(clauses)
    assert "# id: 3" in text
    assert load_clauses(text) == clauses
    assert load_clauses("# a comment\n\nsopen(State,Shop)\n") == [Clause(1, parse_clause(ID3).literals)]
