"""Reference ("real MDP") decisions used to score learned policies.

A scripted oracle is a decision rule written as a boolean expression over
named quantities of the current step, e.g.::

    hospitalized >= 1 or hidden_infected >= 2

When the expression holds the oracle picks ``on_true`` (by default the lock
action on the rule's target), otherwise ``on_false``.  Names resolve to
observation predicate counts (``hospitalized``, ``sopen``, ...), to ground
truth that the agent cannot see (``infected``, ``hidden_infected``,
``event_active``, ...) or to ``interaction``, the number of persons living in
a neighborhood routed to the target shop.
"""

from __future__ import annotations

import ast
import operator
from dataclasses import dataclass

from .sim import DEAD, INFECTED, PREDICATES, SUSCEPTIBLE, Observation, WorldState

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv}
_CMPOPS = {ast.Lt: operator.lt, ast.LtE: operator.le, ast.Gt: operator.gt,
           ast.GtE: operator.ge, ast.Eq: operator.eq, ast.NotEq: operator.ne}


class OracleError(ValueError):
    pass


def quantities(state: WorldState, obs: Observation, target: str | None = None) -> dict[str, float]:
    """Every name a rule may reference, evaluated at one step."""
    q: dict[str, float] = {pred: float(obs.count(pred)) for pred in PREDICATES}
    persons = state.persons
    q["infected"] = float(sum(p.sir_status == INFECTED for p in persons))
    q["hidden_infected"] = float(sum(p.sir_status == INFECTED and not p.quarantined
                                     and not p.hospitalized for p in persons))
    q["susceptible"] = float(sum(p.sir_status == SUSCEPTIBLE for p in persons))
    q["dead"] = float(sum(p.sir_status == DEAD for p in persons))
    q["detected"] = float(obs.observed_positive_count)
    q["event_active"] = float(any(e.active(state.time) for e in state.event_overrides))
    q["time"] = float(state.time)
    q["locked"] = float(bool(target is not None and obs.lock_flags.get(target, False)))
    if target is not None:
        routed = {a for a, b in obs.facts.get("same", ()) if b == target}
        homes = {h for h, r in obs.facts.get("hin", ()) if r in routed}
        q["interaction"] = float(sum(1 for _, h in obs.facts.get("pin", ()) if h in homes))
    else:
        q["interaction"] = 0.0
    return q


def _evaluate(node, env: dict):
    if isinstance(node, ast.Expression):
        return _evaluate(node.body, env)
    if isinstance(node, ast.BoolOp):
        values = [_evaluate(v, env) for v in node.values]
        return all(values) if isinstance(node.op, ast.And) else any(values)
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.Not):
        return not _evaluate(node.operand, env)
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
        return -_evaluate(node.operand, env)
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_evaluate(node.left, env), _evaluate(node.right, env))
    if isinstance(node, ast.Compare):
        left = _evaluate(node.left, env)
        for op, comp in zip(node.ops, node.comparators):
            right = _evaluate(comp, env)
            if type(op) not in _CMPOPS or not _CMPOPS[type(op)](left, right):
                return False
            left = right
        return True
    if isinstance(node, ast.Name):
        if node.id not in env:
            raise OracleError(f"unknown quantity {node.id!r}")
        return env[node.id]
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return node.value
    raise OracleError(f"unsupported syntax in rule: {ast.dump(node)}")


@dataclass(frozen=True)
class ScriptedOracle:
    rule: str
    on_true: str
    on_false: str
    target: str | None = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "_tree", ast.parse(self.rule, mode="eval"))
        except SyntaxError as exc:
            raise OracleError(f"cannot parse rule {self.rule!r}: {exc.msg}") from None

    def holds(self, state: WorldState, obs: Observation) -> bool:
        return bool(_evaluate(self._tree, quantities(state, obs, self.target)))

    def decide(self, state: WorldState, obs: Observation) -> str:
        return self.on_true if self.holds(state, obs) else self.on_false

    @property
    def actions(self) -> tuple[str, str]:
        return (self.on_true, self.on_false)
