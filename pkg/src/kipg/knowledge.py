"""Expert knowledge as functional constraints on action potentials.

A constraint line reads::

    lockshop(State,Shop) :- sopen(State,Shop) ^ quarantined(State,Person) , omega=-1 , alpha=1 , mode=soft

It says: whenever the body holds in the observed state, the potential of the
head action should sit near ``omega`` with importance ``alpha``.  Soft
constraints enter the functional gradient through a Laplace log-prior term;
hard constraints are imposed by solving a linear program for a constrained
potential and mixing it into the model (conditional functional gradient).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .engine import Basis, GradientSample, boost, fit_linear, softmax
from .features import DEFAULT_SCHEMA, STATE, Clause, Literal, Schema, count_groundings
from .sim import ActionKind, target_kind

MODES = ("soft", "hard")
PREDICATE_ALIASES = {"ph": "hospitalized"}


class ConstraintSyntaxError(ValueError):
    def __init__(self, lineno: int, token: str, message: str):
        super().__init__(f"line {lineno}: {message} (at {token!r})")
        self.lineno = lineno
        self.token = token


@dataclass(frozen=True)
class FunctionalConstraint:
    action: str                              # action kind, e.g. "lockshop"
    head_args: tuple[str, ...]
    condition: tuple[Clause, ...]            # satisfied iff every clause has a grounding
    omega: float
    alpha: float = 1.0
    mode: str = "soft"

    @property
    def body(self) -> tuple[Literal, ...]:
        return tuple(lit for c in self.condition for lit in c.literals)

    def to_line(self) -> str:
        head = f"{self.action}({','.join(self.head_args)})"
        body = " ^ ".join(str(lit) for lit in self.body) or "true"
        return (f"{head} :- {body} , omega={self.omega!r} , alpha={self.alpha!r} , "
                f"mode={self.mode}")

    def __str__(self):
        return self.to_line()


@dataclass
class InfusionConfig:
    constraints: list = field(default_factory=list)
    lambda_scale: float = 1.0
    laplace_b: float = 1.0
    q_factor: bool = True          # multiply the knowledge term by Q(s, a)
    gamma0: float = 2.0            # gamma_k = gamma0 / (k + 2)
    omega_box: float | None = None

    def __post_init__(self):
        if self.lambda_scale < 0:
            raise ValueError("lambda_scale must be >= 0")
        if self.laplace_b <= 0:
            raise ValueError("laplace_b must be > 0")

    def gamma(self, k: int) -> float:
        return gamma_schedule(k, self.gamma0)

    def soft(self):
        return [c for c in self.constraints if c.mode == "soft"]

    def hard(self):
        return [c for c in self.constraints if c.mode == "hard"]


def gamma_schedule(k: int, gamma0: float = 2.0) -> float:
    """Conditional-gradient mixing weight for stage k >= 1 (2/(k+2) by default)."""
    return min(1.0, max(0.0, gamma0 / (k + 2.0)))


# ---------------------------------------------------------------------------
# DSL
# ---------------------------------------------------------------------------

_HEAD_RE = re.compile(r"^\s*(\w+)\s*\(([^()]*)\)\s*$")
_LIT_RE = re.compile(r"^\s*(\w+)\s*\(([^()]*)\)\s*$")


def _split_components(literals: Sequence[Literal]) -> tuple[Clause, ...]:
    """Group body literals into clauses connected through shared non-State variables."""
    groups: list[list[int]] = []
    var_group: dict[str, int] = {}
    for i, lit in enumerate(literals):
        linked = sorted({var_group[v] for v in lit.args[1:] if v in var_group and v != STATE})
        if not linked:
            groups.append([i])
            g = len(groups) - 1
        else:
            g = linked[0]
            groups[g].append(i)
            for other in linked[1:]:
                groups[g].extend(groups[other])
                groups[other] = []
        for v in lit.args[1:]:
            if v != STATE:
                var_group[v] = g
        for v, gv in list(var_group.items()):
            if gv in linked[1:]:
                var_group[v] = g
    return tuple(Clause(0, tuple(literals[i] for i in sorted(g))) for g in groups if g)


def _parse_number(lineno: int, key: str, text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConstraintSyntaxError(lineno, text, f"{key} must be numeric") from None


def parse_constraint_line(line: str, lineno: int = 1, schema: Schema = DEFAULT_SCHEMA) -> FunctionalConstraint:
    if ":-" not in line:
        raise ConstraintSyntaxError(lineno, line.strip(), "expected ':-'")
    head_text, rest = line.split(":-", 1)
    m = _HEAD_RE.match(head_text)
    if not m:
        raise ConstraintSyntaxError(lineno, head_text.strip(), "malformed head")
    name = m.group(1).lower()
    try:
        kind = ActionKind(name)
    except ValueError:
        raise ConstraintSyntaxError(lineno, m.group(1), "unknown action") from None
    head_args = tuple(a.strip() for a in m.group(2).split(",") if a.strip())
    expected = 1 if target_kind(kind) is None else 2
    if len(head_args) != expected:
        raise ConstraintSyntaxError(lineno, head_text.strip(),
                                    f"{name} takes {expected} argument(s), got {len(head_args)}")

    parts = [p.strip() for p in rest.split(",")]
    # literal argument lists contain commas; re-join until the first key=value field
    body_parts, settings = [], {}
    depth_buf = ""
    for p in parts:
        if "=" in p and depth_buf == "" and re.match(r"^\w+\s*=", p):
            key, value = p.split("=", 1)
            settings[key.strip().lower()] = (value.strip(), p)
            continue
        depth_buf = f"{depth_buf},{p}" if depth_buf else p
        if depth_buf.count("(") == depth_buf.count(")"):
            body_parts.append(depth_buf)
            depth_buf = ""
    if depth_buf:
        raise ConstraintSyntaxError(lineno, depth_buf, "unbalanced parentheses")
    body_text = ",".join(body_parts).strip()

    literals = []
    if body_text and body_text.lower() != "true":
        for chunk in re.split(r"\^|∧", body_text):
            lm = _LIT_RE.match(chunk)
            if not lm:
                raise ConstraintSyntaxError(lineno, chunk.strip(), "malformed literal")
            pred = PREDICATE_ALIASES.get(lm.group(1), lm.group(1))
            try:
                sig = schema.get(pred)
            except KeyError:
                raise ConstraintSyntaxError(lineno, lm.group(1), "unknown predicate") from None
            args = tuple(a.strip() for a in lm.group(2).split(","))
            if len(args) != sig.arity:
                raise ConstraintSyntaxError(lineno, chunk.strip(),
                                            f"{pred} has arity {sig.arity}, got {len(args)}")
            literals.append(Literal(pred, args))

    for key in ("omega", "alpha"):
        if key not in settings:
            raise ConstraintSyntaxError(lineno, line.strip(), f"missing {key}=")
    omega = _parse_number(lineno, "omega", settings["omega"][0])
    alpha = _parse_number(lineno, "alpha", settings["alpha"][0])
    if alpha < 0:
        raise ConstraintSyntaxError(lineno, settings["alpha"][0], "alpha must be >= 0")
    mode = settings.get("mode", ("soft", ""))[0].lower()
    if mode not in MODES:
        raise ConstraintSyntaxError(lineno, mode, "mode must be soft or hard")
    unknown = set(settings) - {"omega", "alpha", "mode"}
    if unknown:
        key = sorted(unknown)[0]
        raise ConstraintSyntaxError(lineno, settings[key][1], "unknown setting")
    return FunctionalConstraint(action=name, head_args=head_args,
                                condition=_split_components(literals),
                                omega=omega, alpha=alpha, mode=mode)


def parse_constraints(text: str, schema: Schema = DEFAULT_SCHEMA) -> list[FunctionalConstraint]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            out.append(parse_constraint_line(line, lineno, schema))
    return out


def dump_constraints(constraints: Iterable[FunctionalConstraint]) -> str:
    return "".join(c.to_line() + "\n" for c in constraints)


# ---------------------------------------------------------------------------
# applicability
# ---------------------------------------------------------------------------

def _action_kind(label: str) -> tuple[str, str | None]:
    if "(" in label:
        name, rest = label.split("(", 1)
        return name.lower(), rest.rstrip(")")
    return label.lower(), None


def applies(fc: FunctionalConstraint, obs, target: str | None = None) -> bool:
    """True iff every condition clause has a grounding in ``obs``.

    When ``target`` is given, the head's location variable is bound to it.
    """
    binding = {}
    if target is not None and len(fc.head_args) > 1:
        binding[fc.head_args[1]] = target
    for clause in fc.condition:
        b = {v: c for v, c in binding.items() if v in clause.variables}
        if count_groundings(obs, clause, b) == 0:
            return False
    return True


def applicable(constraints: Iterable[FunctionalConstraint], action_label: str, obs) -> list:
    """Constraints targeting ``action_label`` whose condition holds in ``obs``."""
    kind, target = _action_kind(action_label)
    return [fc for fc in constraints if fc.action == kind and applies(fc, obs, target)]


# ---------------------------------------------------------------------------
# gradient providers
# ---------------------------------------------------------------------------

def _sign(x: float) -> float:
    return float(np.sign(x))


def knowledge_term(psi_a: float, fcs: Sequence[FunctionalConstraint], lambda_scale: float = 1.0,
                   laplace_b: float = 1.0) -> float:
    """Subgradient of sum_i lambda alpha_i log Laplace(psi; omega_i, b) at psi."""
    return sum(lambda_scale * fc.alpha * (-_sign(psi_a - fc.omega)) / laplace_b for fc in fcs)


def bayes_gradient(sample: GradientSample, a: int, fcs: Sequence[FunctionalConstraint],
                   cfg: InfusionConfig) -> float:
    """[(I - pi) + sum_i lambda alpha_i (-sign(psi_a - omega_i))] * Q.

    ``fcs`` must already be filtered to constraints that target action ``a``
    and apply to the sample's observation.  With ``cfg.q_factor`` off only the
    likelihood part is scaled by Q.
    """
    base = (1.0 if sample.taken == a else 0.0) - float(sample.pi[a])
    k = knowledge_term(float(sample.psi[a]), fcs, cfg.lambda_scale, cfg.laplace_b)
    if cfg.q_factor:
        return (base + k) * sample.q
    return base * sample.q + k


def baseline_gradient(sample: GradientSample, a: int, fcs: Sequence[FunctionalConstraint],
                      alpha: float, q_factor: bool = True) -> float:
    """Advice-count form [(I - pi) + alpha (n_t - n_f)] * Q."""
    n_t = sum(1 for fc in fcs if fc.omega > 0)
    n_f = sum(1 for fc in fcs if fc.omega < 0)
    base = (1.0 if sample.taken == a else 0.0) - float(sample.pi[a])
    k = alpha * (n_t - n_f)
    return (base + k) * sample.q if q_factor else base * sample.q + k


def lp_coefficient(sample: GradientSample, a: int) -> float:
    """Objective coefficient pi * (I - pi) * Q of the constrained LP."""
    pi = float(sample.pi[a])
    return pi * ((1.0 if sample.taken == a else 0.0) - pi) * sample.q


def lagrangian(psi: float, sample: GradientSample, a: int, fcs: Sequence[FunctionalConstraint]) -> float:
    return psi * lp_coefficient(sample, a) - sum(fc.alpha * (psi - fc.omega) for fc in fcs)


def lagrangian_gradient(sample: GradientSample, a: int, fcs: Sequence[FunctionalConstraint],
                        alphas: Sequence[float] | None = None) -> float:
    alphas = [fc.alpha for fc in fcs] if alphas is None else list(alphas)
    return lp_coefficient(sample, a) - float(sum(alphas))


# ---------------------------------------------------------------------------
# conditional functional gradient
# ---------------------------------------------------------------------------

@dataclass
class LPSolution:
    psi_star: np.ndarray
    objective: float
    constrained: np.ndarray       # bool mask of points fixed by an equality constraint
    coefficients: np.ndarray


def default_omega_box(fcs: Sequence[FunctionalConstraint]) -> float:
    return 10.0 * max([1.0] + [abs(fc.omega) for fc in fcs])


def constrained_value(fcs: Sequence[FunctionalConstraint]) -> float:
    """Value imposed on a point by its applicable hard constraints (alpha-weighted mean of omega)."""
    alphas = np.array([fc.alpha for fc in fcs], dtype=float)
    omegas = np.array([fc.omega for fc in fcs], dtype=float)
    if alphas.sum() > 0:
        return float(alphas @ omegas / alphas.sum())
    return float(omegas.mean())


def solve_constrained_psi(coefficients, applicable_fcs: Sequence[Sequence[FunctionalConstraint]],
                          omega_box: float | None = None) -> LPSolution:
    """Minimize sum_i psi_i c_i subject to psi_i = omega at constrained points and |psi_i| <= box.

    The program separates over points: constrained points take their imposed
    value, free points sit at the box vertex ``-box * sign(c_i)``.
    """
    c = np.asarray(coefficients, dtype=float)
    if len(applicable_fcs) != len(c):
        raise ValueError("need one constraint list per point")
    all_fcs = [fc for fcs in applicable_fcs for fc in fcs]
    box = default_omega_box(all_fcs) if omega_box is None else float(omega_box)
    max_omega = max([0.0] + [abs(fc.omega) for fc in all_fcs])
    if box <= max_omega:
        raise ValueError(f"box bound {box} must exceed max |omega| = {max_omega}")
    psi = -box * np.sign(c)
    mask = np.zeros(len(c), dtype=bool)
    for i, fcs in enumerate(applicable_fcs):
        if fcs:
            psi[i] = constrained_value(fcs)
            mask[i] = True
    return LPSolution(psi_star=psi, objective=float(psi @ c), constrained=mask, coefficients=c)


def solve_for_samples(samples: Sequence[GradientSample], a: int, action_label: str,
                      hard: Sequence[FunctionalConstraint], omega_box: float | None = None) -> LPSolution:
    coeffs = [lp_coefficient(s, a) for s in samples]
    fcs = [applicable(hard, action_label, s.obs) for s in samples]
    return solve_constrained_psi(coeffs, fcs, omega_box)


def cfg_update(psi_k, psi_star, gamma_k: float):
    if not 0.0 <= gamma_k <= 1.0:
        raise ValueError("gamma_k must lie in [0, 1]")
    return (1.0 - gamma_k) * np.asarray(psi_k, dtype=float) + gamma_k * np.asarray(psi_star, dtype=float)


# ---------------------------------------------------------------------------
# stage-level infusion
# ---------------------------------------------------------------------------

FREE_POINT_RULES = ("vertex", "hold")


class _ApplicableCache:
    """Memoizes constraint applicability per (observation, action label)."""

    def __init__(self, constraints: Sequence[FunctionalConstraint], actions: Sequence[str]):
        self.constraints = list(constraints)
        self.actions = list(actions)
        self._memo: dict = {}

    def __call__(self, sample: GradientSample, a: int) -> list:
        if not self.constraints or sample.obs is None:
            return []
        key = (id(sample.obs), a)
        hit = self._memo.get(key)
        if hit is None:
            hit = (sample.obs, applicable(self.constraints, self.actions[a], sample.obs))
            self._memo[key] = hit
        return hit[1]


def soft_gradient_fn(actions: Sequence[str], soft: Sequence[FunctionalConstraint], cfg: InfusionConfig):
    lookup = _ApplicableCache(soft, actions)

    def fn(sample: GradientSample, a: int) -> float:
        return bayes_gradient(sample, a, lookup(sample, a), cfg)
    return fn


def baseline_gradient_fn(actions: Sequence[str], fcs: Sequence[FunctionalConstraint], alpha: float,
                         q_factor: bool = True):
    lookup = _ApplicableCache(fcs, actions)

    def fn(sample: GradientSample, a: int) -> float:
        return baseline_gradient(sample, a, lookup(sample, a), alpha, q_factor)
    return fn


def lagrangian_gradient_fn(actions: Sequence[str], hard: Sequence[FunctionalConstraint],
                           lambda_scale: float = 1.0):
    lookup = _ApplicableCache(hard, actions)

    def fn(sample: GradientSample, a: int) -> float:
        fcs = lookup(sample, a)
        return lagrangian_gradient(sample, a, fcs, [lambda_scale * fc.alpha for fc in fcs])
    return fn


def _refresh(model, samples: Sequence[GradientSample]) -> list[GradientSample]:
    """Samples with psi and pi recomputed under ``model`` (taken action and Q kept)."""
    if not samples:
        return []
    psi = model.psi(np.vstack([s.features for s in samples]))
    pi = softmax(psi)
    return [GradientSample(features=s.features, taken=s.taken, pi=pi[i], q=s.q, psi=psi[i],
                           obs=s.obs, target=s.target) for i, s in enumerate(samples)]


def fit_correction(X, delta, ridge: float = 1e-6):
    """Correction basis approximating the pointwise change ``delta`` of one action's potential."""
    w, b = fit_linear(X, delta, ridge)
    return Basis(weights=w, intercept=b, step=1.0, kind="correction")


def cfg_stage(model, samples: Sequence[GradientSample], hard: Sequence[FunctionalConstraint],
              gamma_k: float, omega_box: float | None = None, free_point_rule: str = "vertex"):
    """Mix the LP solution into the current potentials and store the change as correction bases.

    ``free_point_rule`` selects psi* at points no hard constraint touches:
    "vertex" keeps the LP box vertex, "hold" keeps the current potential so
    that only constrained points move.
    """
    if free_point_rule not in FREE_POINT_RULES:
        raise ValueError(f"free_point_rule must be one of {FREE_POINT_RULES}")
    if not hard or not samples or gamma_k == 0.0:
        return model
    model = model.copy()
    samples = _refresh(model, samples)
    X = np.vstack([s.features for s in samples])
    for a_idx, label in enumerate(model.actions):
        sol = solve_for_samples(samples, a_idx, label, hard, omega_box)
        if not sol.constrained.any():
            continue
        psi_old = np.array([s.psi[a_idx] for s in samples])
        target = sol.psi_star.copy()
        if free_point_rule == "hold":
            target[~sol.constrained] = psi_old[~sol.constrained]
        delta = cfg_update(psi_old, target, gamma_k) - psi_old
        if not np.any(delta):
            continue
        model.add_basis(label, fit_correction(X, delta))
    return model


def combined_stage(model, samples: Sequence[GradientSample], soft: Sequence[FunctionalConstraint],
                   hard: Sequence[FunctionalConstraint], cfg: InfusionConfig, rng=None,
                   eta: float = 0.5, subsample: float = 0.7, free_point_rule: str = "vertex"):
    """One stage: boost on the soft-infused gradient, then impose the hard constraints."""
    fn = soft_gradient_fn(model.actions, soft, cfg)
    model = boost(model, samples, fn, eta=eta, rng=rng, subsample=subsample)
    return cfg_stage(model, samples, hard, cfg.gamma(model.stages), cfg.omega_box, free_point_rule)
