"""Relational count features.

A clause is an existentially quantified conjunction of literals over the
observation schema; its value on an observation is the number of distinct
variable bindings that satisfy every literal (the grounding count).  Clauses
are produced by exhaustive mode-guided enumeration and then filtered by the
mutual information between ``count > 0`` and an action label.
"""

from __future__ import annotations

import itertools
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

STATE = "State"
TYPES = frozenset({"State", "Person", "Home", "Res", "Shop", "Work", "Route"})


@dataclass(frozen=True)
class PredicateSig:
    name: str
    arg_types: tuple[frozenset, ...]   # first entry is always {State}

    @property
    def arity(self) -> int:
        return len(self.arg_types)


def _sig(name, *types):
    return PredicateSig(name, tuple(frozenset(t.split("|")) for t in ("State",) + types))


@dataclass(frozen=True)
class Schema:
    predicates: tuple[PredicateSig, ...]

    def __post_init__(self):
        names = [p.name for p in self.predicates]
        if len(set(names)) != len(names):
            raise ValueError("predicate names must be unique")
        for p in self.predicates:
            if p.arg_types[0] != frozenset({STATE}):
                raise ValueError(f"{p.name}: first argument must be State")
            for t in p.arg_types:
                if not t or not t <= TYPES:
                    raise ValueError(f"{p.name}: bad argument types {sorted(t)}")

    def get(self, name: str) -> PredicateSig:
        for p in self.predicates:
            if p.name == name:
                return p
        raise KeyError(name)

    def restrict(self, names: Iterable[str]) -> "Schema":
        keep = set(names)
        return Schema(tuple(p for p in self.predicates if p.name in keep))

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.predicates]


# `same` relates two establishments on one route: (Res, Shop), (Res, Work) or (Shop, Work)
DEFAULT_SCHEMA = Schema((
    _sig("same", "Res|Shop", "Shop|Work"),
    _sig("pin", "Person", "Home"),
    _sig("hin", "Home", "Res"),
    _sig("sopen", "Shop"),
    _sig("ropen", "Res"),
    _sig("wopen", "Work"),
    _sig("hopen", "Home"),
    _sig("hospitalized", "Person"),
    _sig("quarantined", "Person"),
))


@dataclass(frozen=True)
class ModeDeclaration:
    """Per predicate, the role of each non-State argument: '+' input, '-' output.

    An input argument must reuse a variable already present in the clause; an
    output argument may introduce a new one.  Predicates not listed default to
    all outputs.
    """
    roles: dict = field(default_factory=dict)

    def role(self, pred: str, position: int) -> str:
        spec = self.roles.get(pred)
        if spec is None:
            return "-"
        return spec[position - 1]

    @classmethod
    def parse(cls, lines: Iterable[str]) -> "ModeDeclaration":
        """Aleph-style ``modeb(*, same(+State,-Res,-Shop))`` or bare ``same(+State,-Res,-Shop)``."""
        roles = {}
        for line in lines:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            m = re.search(r"(\w+)\(([^()]*)\)\)?\.?$", line)
            if not m:
                raise ValueError(f"bad mode declaration: {line!r}")
            args = [a.strip() for a in m.group(2).split(",")]
            roles[m.group(1)] = tuple(a[0] if a[0] in "+-#" else "-" for a in args[1:])
        return cls(roles)


@dataclass(frozen=True)
class Literal:
    pred: str
    args: tuple[str, ...]

    def __str__(self):
        return f"{self.pred}({','.join(self.args)})"


@dataclass(frozen=True)
class Clause:
    id: int
    literals: tuple[Literal, ...]

    def __str__(self):
        return " ^ ".join(str(lit) for lit in self.literals)

    @property
    def variables(self) -> list[str]:
        seen = []
        for lit in self.literals:
            for a in lit.args:
                if a not in seen:
                    seen.append(a)
        return seen

    def canonical(self):
        return canonical_key(self.literals)

    def same_content(self, other: "Clause") -> bool:
        return self.canonical() == other.canonical()


_LITERAL_RE = re.compile(r"\s*(\w+)\s*\(([^()]*)\)\s*")


def parse_literals(text: str) -> tuple[Literal, ...]:
    parts = [p for p in re.split(r"\^|∧|\\land", text) if p.strip()]
    out = []
    for part in parts:
        m = _LITERAL_RE.fullmatch(part)
        if not m:
            raise ValueError(f"cannot parse literal {part.strip()!r}")
        args = tuple(a.strip() for a in m.group(2).split(","))
        out.append(Literal(m.group(1), args))
    return tuple(out)


def parse_clause(text: str, clause_id: int = 0) -> Clause:
    return Clause(clause_id, parse_literals(text))


def _rename(literals: Sequence[Literal]) -> tuple:
    names = {STATE: STATE}
    out = []
    for lit in literals:
        args = []
        for a in lit.args:
            if a not in names:
                names[a] = f"V{len(names)}"
            args.append(names[a])
        out.append((lit.pred, tuple(args)))
    return tuple(out)


def canonical_key(literals: Sequence[Literal]) -> tuple:
    """Identity of a conjunction up to variable renaming and literal order."""
    if len(literals) <= 6:
        return min(_rename(perm) for perm in itertools.permutations(literals))
    return _rename(sorted(literals, key=lambda l: (l.pred, l.args)))


# ---------------------------------------------------------------------------
# enumeration
# ---------------------------------------------------------------------------

def _var_name(types: frozenset, taken: set) -> str:
    base = next(iter(types)) if len(types) == 1 else "Loc"
    name, k = base, 2
    while name in taken:
        name, k = f"{base}{k}", k + 1
    return name


def _extensions(literals, var_types, sig: PredicateSig, modes: ModeDeclaration):
    """All ways to append a literal of ``sig`` that share >= 1 non-State variable."""
    options_per_arg = []
    for pos in range(1, sig.arity):
        allowed = sig.arg_types[pos]
        reuse = [(v, var_types[v] & allowed) for v in var_types
                 if v != STATE and var_types[v] & allowed]
        opts = [("old", v, t) for v, t in reuse]
        if modes.role(sig.name, pos) != "+":
            opts.append(("new", None, allowed))
        options_per_arg.append(opts)
    for combo in itertools.product(*options_per_arg):
        if literals and not any(kind == "old" for kind, _, _ in combo):
            continue
        if not literals and any(kind == "old" for kind, _, _ in combo):
            continue
        new_types = dict(var_types)
        taken = set(new_types)
        args = [STATE]
        for kind, var, types in combo:
            if kind == "old":
                new_types[var] = types
                args.append(var)
            else:
                name = _var_name(types, taken)
                taken.add(name)
                new_types[name] = types
                args.append(name)
        lit = Literal(sig.name, tuple(args))
        if lit in literals:
            continue
        yield literals + (lit,), new_types


def enumerate_clauses(schema: Schema = DEFAULT_SCHEMA, modes: ModeDeclaration | None = None,
                      max_len: int = 4) -> list[Clause]:
    """Exhaustive list of connected, mode-valid clauses with 1..max_len literals.

    Clauses are unique up to variable renaming and literal order.  Output is
    ordered by length, then by predicate names and argument positions; ids
    start at 1 in that order.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    modes = modes or ModeDeclaration()
    preds = sorted(schema.predicates, key=lambda p: p.name)
    frontier = []
    seen = set()
    for sig in preds:
        for lits, types in _extensions((), {STATE: frozenset({STATE})}, sig, modes):
            key = canonical_key(lits)
            if key not in seen:
                seen.add(key)
                frontier.append((lits, types))
    found = list(frontier)
    for _ in range(max_len - 1):
        nxt = []
        for lits, types in frontier:
            for sig in preds:
                for new_lits, new_types in _extensions(lits, types, sig, modes):
                    key = canonical_key(new_lits)
                    if key in seen:
                        continue
                    seen.add(key)
                    nxt.append((new_lits, new_types))
        found.extend(nxt)
        frontier = nxt
    found.sort(key=lambda item: (len(item[0]), _order_key(item[0])))
    return [Clause(i + 1, lits) for i, (lits, _) in enumerate(found)]


def _order_key(literals):
    return tuple((lit.pred, pos, arg) for lit in literals for pos, arg in enumerate(lit.args))


def is_connected(literals: Sequence[Literal]) -> bool:
    """Every literal after the first shares a non-State variable with an earlier one."""
    seen: set = set()
    for k, lit in enumerate(literals):
        vs = {a for a in lit.args[1:] if a != STATE}
        if k > 0 and not vs & seen:
            return False
        seen |= vs
    return True


# ---------------------------------------------------------------------------
# counting
# ---------------------------------------------------------------------------

def _facts_of(obs_or_facts):
    return obs_or_facts.facts if hasattr(obs_or_facts, "facts") else obs_or_facts


def count_groundings(obs, clause: Clause | Sequence[Literal], binding: dict | None = None) -> int:
    """Number of distinct variable bindings satisfying every literal of ``clause``.

    ``obs`` is an Observation (or a predicate -> set-of-tuples mapping); fact
    tuples omit the State argument.  ``binding`` pre-binds variables.
    """
    facts = _facts_of(obs)
    literals = clause.literals if isinstance(clause, Clause) else tuple(clause)
    # State is shared by every literal and bound to the single observed state
    body = [(lit.pred, lit.args[1:]) for lit in literals]
    if any(len(facts.get(pred, ())) == 0 for pred, _ in body):
        return 0

    def search(remaining, bound):
        if not remaining:
            return 1
        # most constrained literal first
        best = max(range(len(remaining)),
                   key=lambda k: sum(a in bound for a in remaining[k][1]))
        pred, args = remaining[best]
        rest = remaining[:best] + remaining[best + 1:]
        total = 0
        for tup in facts.get(pred, ()):
            if len(tup) != len(args):
                continue
            new = None
            ok = True
            for a, v in zip(args, tup):
                cur = bound.get(a) if new is None else new.get(a)
                if cur is None:
                    if new is None:
                        new = dict(bound)
                    new[a] = v
                elif cur != v:
                    ok = False
                    break
            if ok:
                total += search(rest, bound if new is None else new)
        return total

    return search(body, dict(binding or {}))


def featurize(obs, features: Sequence[Clause]) -> np.ndarray:
    return np.array([count_groundings(obs, c) for c in features], dtype=np.int64)


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------

def mutual_information(xs: Sequence, ys: Sequence) -> float:
    """Plug-in mutual information (nats) of two discrete sequences."""
    n = len(xs)
    if n == 0:
        return 0.0
    joint = Counter(zip(xs, ys))
    px = Counter(xs)
    py = Counter(ys)
    mi = 0.0
    for (x, y), c in joint.items():
        mi += c / n * math.log(c * n / (px[x] * py[y]))
    return max(0.0, mi)


def select_features(clauses: Sequence[Clause], labeled_data: Sequence, mi_threshold: float = 0.01,
                    budget: int = 12) -> list[Clause]:
    """Keep clauses whose binarized count carries more than ``mi_threshold``
    nats about the action label; best ``budget`` by MI, ties by clause id."""
    if not labeled_data:
        raise ValueError("labeled_data must be non-empty")
    if mi_threshold < 0:
        raise ValueError("mi_threshold must be >= 0")
    labels = [str(a) for _, a in labeled_data]
    scored = []
    for clause in clauses:
        present = [count_groundings(obs, clause) > 0 for obs, _ in labeled_data]
        mi = mutual_information(present, labels)
        if mi > mi_threshold:
            scored.append((-mi, clause.id, clause))
    scored.sort(key=lambda t: (t[0], t[1]))
    return [c for _, _, c in scored[:budget]]


# ---------------------------------------------------------------------------
# clause files
# ---------------------------------------------------------------------------

def dump_clauses(clauses: Sequence[Clause]) -> str:
    lines = []
    for c in clauses:
        lines.append(f"# id: {c.id}")
        lines.append(str(c))
    return "\n".join(lines) + ("\n" if lines else "")


def load_clauses(text: str) -> list[Clause]:
    out = []
    pending_id = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        m = re.fullmatch(r"#\s*id:\s*(\d+)", line)
        if m:
            pending_id = int(m.group(1))
            continue
        if line.startswith("#"):
            continue
        cid = pending_id if pending_id is not None else len(out) + 1
        out.append(parse_clause(line, cid))
        pending_id = None
    return out
