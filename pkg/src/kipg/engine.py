"""Functional policy gradient with boosted linear bases.

Each action ``a`` has a potential ``psi_a(x) = psi0_a + sum_j v_j g(s_j (w_j . x + b_j))``
over aggregated features ``x``.  Boosting appends one basis per action per
stage with output weight ``v_j = 1``; ``g`` is the identity until the model
is refined as a 2-layer network, after which it is the softplus
``g(z) = log(1 + exp(beta z)) / beta``.  The policy is the Boltzmann
distribution over potentials.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ETA = 0.5
SUBSAMPLE = 0.7
RIDGE = 1e-6


def softmax(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=float)
    z = psi - psi.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softplus(z, beta: float = 1.0):
    z = np.asarray(z, dtype=float)
    return np.logaddexp(0.0, beta * z) / beta


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


@dataclass
class Basis:
    weights: np.ndarray
    intercept: float
    step: float = 1.0
    output: float = 1.0
    kind: str = "gradient"      # "gradient" or "correction"

    def linear(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.weights + self.intercept

    def preactivation(self, X) -> np.ndarray:
        return self.step * self.linear(X)


@dataclass
class PolicyModel:
    actions: list[str]
    n_features: int
    bases: dict = field(default_factory=dict)
    psi0: dict = field(default_factory=dict)
    activation: str = "identity"
    beta: float = 1.0
    stages: int = 0

    def __post_init__(self):
        for a in self.actions:
            self.bases.setdefault(a, [])
            self.psi0.setdefault(a, 0.0)

    def copy(self) -> "PolicyModel":
        return copy.deepcopy(self)

    def _g(self, z):
        return z if self.activation == "identity" else softplus(z, self.beta)

    def psi_action(self, action: str, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.full(X.shape[0], float(self.psi0[action]))
        for b in self.bases[action]:
            out = out + b.output * self._g(b.preactivation(X))
        return out

    def psi(self, X) -> np.ndarray:
        """Potentials, shape (n_samples, n_actions), or (n_actions,) for one vector."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        out = np.column_stack([self.psi_action(a, X) for a in self.actions])
        return out[0] if single else out

    def add_basis(self, action: str, basis: Basis) -> None:
        self.bases[action].append(basis)

    @property
    def n_bases(self) -> int:
        return sum(len(v) for v in self.bases.values())


def policy_prob(model: PolicyModel, features) -> np.ndarray:
    return softmax(model.psi(features))


def greedy_action(model: PolicyModel, features) -> int:
    """Index of the most probable action; ties go to the earliest action."""
    return int(np.argmax(model.psi(features)))


def sample_action(model: PolicyModel, features, rng_key) -> int:
    probs = policy_prob(model, features)
    return sample_index(probs, rng_key)


def sample_index(probs, rng_key) -> int:
    u = np.random.default_rng(rng_key).random()
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(idx, len(probs) - 1)


def estimate_q(rewards: Sequence[float], discount: float = 0.9) -> list[float]:
    """Monte Carlo return-to-go for every step of one trajectory."""
    if not 0.0 <= discount < 1.0:
        raise ValueError("discount must lie in [0, 1)")
    q = [0.0] * len(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + discount * acc
        q[t] = acc
    return q


@dataclass
class Trajectory:
    observations: list
    actions: list[int]
    rewards: list[float]
    features: list[np.ndarray] = field(default_factory=list)
    horizon: int | None = None

    def __len__(self):
        return len(self.actions)


@dataclass
class GradientSample:
    features: np.ndarray
    taken: int
    pi: np.ndarray
    q: float
    psi: np.ndarray
    obs: object = None
    target: object = None    # per-action ground targets (for constraint heads)

    @property
    def indicator(self) -> np.ndarray:
        ind = np.zeros(len(self.pi))
        ind[self.taken] = 1.0
        return ind


def make_samples(model: PolicyModel, trajectories: Sequence[Trajectory],
                 discount: float = 0.9) -> list[GradientSample]:
    out = []
    for traj in trajectories:
        q = estimate_q(traj.rewards, discount)
        if not traj.features:
            continue
        X = np.vstack(traj.features)
        psi = model.psi(X)
        pi = softmax(psi)
        for t in range(len(traj.actions)):
            out.append(GradientSample(features=X[t], taken=traj.actions[t], pi=pi[t], q=q[t],
                                      psi=psi[t], obs=traj.observations[t]))
    return out


def base_gradient(sample: GradientSample, a: int) -> float:
    indicator = 1.0 if sample.taken == a else 0.0
    return (indicator - float(sample.pi[a])) * sample.q


def fit_linear(X, y, ridge: float = RIDGE) -> tuple[np.ndarray, float]:
    """Least squares ``y ~ X w + b``; the L2 penalty on ``w`` is added only
    when the centered design is rank deficient."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    yc = y - y_mean
    d = X.shape[1]
    if d == 0:
        return np.zeros(0), float(y_mean)
    A = Xc.T @ Xc
    if np.linalg.matrix_rank(A) < d:
        A = A + ridge * np.eye(d)
    w = np.linalg.solve(A, Xc.T @ yc)
    return w, float(y_mean - x_mean @ w)


def fit_basis(X, y, rng=None, subsample: float = SUBSAMPLE, ridge: float = RIDGE) -> Basis:
    """Fit one linear basis to functional-gradient values on a fresh sub-sample."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if subsample < 1.0:
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        m = max(2, int(math.ceil(subsample * n)))
        idx = np.sort(rng.choice(n, size=min(m, n), replace=False))
        X, y = X[idx], y[idx]
    if len(y) < 2:
        raise ValueError("fit_basis needs at least 2 samples after sub-sampling")
    w, b = fit_linear(X, y, ridge)
    return Basis(weights=w, intercept=b)


GradientFn = Callable[[GradientSample, int], float]


def step_size(stage: int, eta: float = ETA) -> float:
    return eta / math.sqrt(stage)


def boost(model: PolicyModel, samples: Sequence[GradientSample], gradient_fn: GradientFn = base_gradient,
          eta: float = ETA, rng=None, subsample: float = SUBSAMPLE) -> PolicyModel:
    """One functional gradient stage: fit a basis per action and add it with step eta/sqrt(k)."""
    model = model.copy()
    k = model.stages + 1
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    if samples:
        X = np.vstack([s.features for s in samples])
        for a_idx, a in enumerate(model.actions):
            y = np.array([gradient_fn(s, a_idx) for s in samples])
            if not np.any(y):
                continue
            basis = fit_basis(X, y, rng, subsample)
            basis.step = step_size(k, eta)
            model.add_basis(a, basis)
    model.stages = k
    return model


# ---------------------------------------------------------------------------
# refinement as a 2-layer softplus network
# ---------------------------------------------------------------------------

def _pack(model: PolicyModel) -> np.ndarray:
    parts = []
    for a in model.actions:
        for b in model.bases[a]:
            parts.append(np.concatenate([b.weights, [b.intercept, b.output]]))
    return np.concatenate(parts) if parts else np.zeros(0)


def _unpack(model: PolicyModel, theta: np.ndarray) -> PolicyModel:
    out = model.copy()
    d = model.n_features
    pos = 0
    for a in out.actions:
        for b in out.bases[a]:
            b.weights = theta[pos:pos + d].copy()
            b.intercept = float(theta[pos + d])
            b.output = float(theta[pos + d + 1])
            pos += d + 2
    return out


def refinement_objective(model: PolicyModel, X, taken, q) -> float:
    """sum_i Q_i log pi(a_i | x_i) under the softplus network view."""
    net = model if model.activation == "softplus" else _as_network(model)
    psi = net.psi(np.asarray(X, dtype=float))
    logp = psi - np.logaddexp.reduce(psi, axis=1, keepdims=True)
    idx = np.arange(len(taken))
    return float(np.sum(np.asarray(q) * logp[idx, np.asarray(taken)]))


def refinement_gradient(model: PolicyModel, X, taken, q) -> np.ndarray:
    """Analytic gradient of the refinement objective w.r.t. the packed parameters."""
    net = model if model.activation == "softplus" else _as_network(model)
    X = np.asarray(X, dtype=float)
    q = np.asarray(q, dtype=float)
    psi = net.psi(X)
    pi = softmax(psi)
    ind = np.zeros_like(pi)
    ind[np.arange(len(taken)), np.asarray(taken)] = 1.0
    dpsi = (ind - pi) * q[:, None]          # d objective / d psi_a(x_i)
    grads = []
    beta = net.beta
    for a_idx, a in enumerate(net.actions):
        g_a = dpsi[:, a_idx]
        for b in net.bases[a]:
            z = b.preactivation(X)
            h = softplus(z, beta)
            gate = sigmoid(beta * z)        # d softplus / dz
            common = g_a * b.output * gate * b.step
            grads.append(np.concatenate([X.T @ common, [common.sum(), g_a @ h]]))
    return np.concatenate(grads) if grads else np.zeros(0)


def _as_network(model: PolicyModel) -> PolicyModel:
    net = model.copy()
    net.activation = "softplus"
    return net


def refine_network(model: PolicyModel, samples: Sequence[GradientSample], epochs: int,
                   lr: float = 0.01, beta: float | None = None, max_halvings: int = 10) -> PolicyModel:
    """Full-batch gradient ascent on sum Q log pi(a_taken) over hidden and output weights.

    A step that lowers the objective by more than 1e-6 is retried with half
    the learning rate, at most ``max_halvings`` times; if it still fails the
    run stops at the last accepted parameters.
    """
    if epochs <= 0 or not samples:
        return model
    if model.n_bases == 0:
        raise ValueError("refine_network needs a model with at least one basis")
    net = _as_network(model)
    if beta is not None:
        net.beta = float(beta)
    X = np.vstack([s.features for s in samples])
    taken = np.array([s.taken for s in samples])
    q = np.array([s.q for s in samples])
    theta = _pack(net)
    current = refinement_objective(net, X, taken, q)
    for _ in range(epochs):
        grad = refinement_gradient(net, X, taken, q)
        step = lr
        for _ in range(max_halvings + 1):
            cand = _unpack(net, theta + step * grad)
            value = refinement_objective(cand, X, taken, q)
            if value >= current - 1e-6:
                break
            step *= 0.5
        else:
            break
        theta, net, current = theta + step * grad, cand, value
    return net


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return float(x).hex()


def dumps_model(model: PolicyModel) -> str:
    lines = ["kipg-model 1",
             f"activation {model.activation}",
             f"beta {_fmt(model.beta)}",
             f"stages {model.stages}",
             f"n_features {model.n_features}"]
    for a in model.actions:
        lines.append(f"action {a} psi0 {_fmt(model.psi0[a])} bases {len(model.bases[a])}")
        for b in model.bases[a]:
            w = ",".join(_fmt(v) for v in b.weights)
            lines.append(f"  basis {b.kind} step {_fmt(b.step)} output {_fmt(b.output)} "
                         f"intercept {_fmt(b.intercept)} weights {w}")
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> PolicyModel:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or not lines[0].startswith("kipg-model"):
        raise ValueError("not a kipg model file")
    header = {}
    i = 1
    while i < len(lines) and not lines[i].startswith("action "):
        key, value = lines[i].split(None, 1)
        header[key] = value
        i += 1
    actions, bases, psi0 = [], {}, {}
    n_features = int(header["n_features"])
    while i < len(lines):
        tok = lines[i].split()
        name = tok[1]
        actions.append(name)
        psi0[name] = float.fromhex(tok[3])
        count = int(tok[5])
        bases[name] = []
        for j in range(count):
            bt = lines[i + 1 + j].split()
            fields = dict(zip(bt[2::2], bt[3::2]))
            weights = np.array([float.fromhex(v) for v in fields["weights"].split(",")]
                               if fields.get("weights") else [], dtype=float)
            bases[name].append(Basis(weights=weights, intercept=float.fromhex(fields["intercept"]),
                                     step=float.fromhex(fields["step"]),
                                     output=float.fromhex(fields["output"]), kind=bt[1]))
        i += 1 + count
    return PolicyModel(actions=actions, n_features=n_features, bases=bases, psi0=psi0,
                       activation=header.get("activation", "identity"),
                       beta=float.fromhex(header["beta"]), stages=int(header["stages"]))
