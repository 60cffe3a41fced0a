"""Knowledge-infused relational policy gradient boosting.

Modules:

* ``sim``        agent-based SIR city with lockdown actions and events
* ``features``   relational clauses, grounding counts and feature selection
* ``aggregate``  kernel aggregation of count histories
* ``engine``     functional policy gradient boosting of a Boltzmann policy
* ``knowledge``  constraint language and soft / hard knowledge infusion
* ``oracle``     scripted reference decisions
* ``harness``    experiment protocol and reports (``kipg`` CLI in ``cli``)
"""

from __future__ import annotations

from .aggregate import CountHistory, aggregate, kernel
from .engine import PolicyModel, boost, greedy_action, policy_prob, softmax
from .features import Clause, count_groundings, featurize, parse_clause
from .knowledge import FunctionalConstraint, InfusionConfig, parse_constraints
from .sim import Action, CityConfig, ConfigError, Observation, WorldState, init_city, observe, step

__version__ = "0.1.0"

__all__ = [
    "Action", "CityConfig", "Clause", "ConfigError", "CountHistory", "FunctionalConstraint",
    "InfusionConfig", "Observation", "PolicyModel", "WorldState", "aggregate", "boost",
    "count_groundings", "featurize", "greedy_action", "init_city", "kernel", "observe",
    "parse_clause", "parse_constraints", "policy_prob", "softmax", "step",
]
