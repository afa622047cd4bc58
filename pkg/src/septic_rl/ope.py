"""Off-policy evaluation: behavior cloning, fitted Q evaluation, and the
doubly-robust estimator.

The DR recursion walks each held-out trajectory backward,

    V = Vhat(s_t) + rho_t * (r_t + gamma * V - Qhat(s_t, a_t)),

with rho_t the importance ratio pi_e(a_t|s_t) / pi_b(a_t|s_t). For the
deterministic greedy policy rho is 0 or 1/pi_b, so a disagreement at the
first step collapses the estimate to the model term Vhat(s_0).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import qnet
from .errors import ConfigurationError, RuntimeFailure, TrainingDiverged, ValidationError
from .mdp_core import FeatureScaler, N_ACTIONS, Trajectory, flatten_transitions
from .qnet import Checkpoint


@dataclass(frozen=True)
class OpeConfig:
    behavior_floor: float = 1e-3
    bc_steps: int = 3000
    bc_batch: int = 256
    bc_lr: float = 1e-3
    fqe_iterations: int = 50
    fqe_steps: int = 150
    fqe_batch: int = 256
    fqe_lr: float = 1e-3

    def __post_init__(self):
        if not (0.0 < self.behavior_floor < 1.0 / N_ACTIONS):
            raise ConfigurationError("behavior_floor must lie in (0, 1/25)")
        if min(self.bc_steps, self.fqe_iterations, self.fqe_steps) < 1:
            raise ConfigurationError("fitting step counts must be >= 1")


class GreedyCheckpointPolicy:
    """Deterministic evaluation policy: argmax Q of a trained checkpoint."""

    def __init__(self, checkpoint: Checkpoint):
        self._ckpt = checkpoint

    def actions(self, raw_states: np.ndarray) -> np.ndarray:
        return self._ckpt.greedy_flat(np.atleast_2d(raw_states))

    def probabilities(self, raw_states: np.ndarray) -> np.ndarray:
        a = self.actions(raw_states)
        probs = np.zeros((len(a), N_ACTIONS))
        probs[np.arange(len(a)), a] = 1.0
        return probs


class EpsilonGreedyPolicy:
    """Stochastic wrapper used only by evaluation harnesses."""

    def __init__(self, base, epsilon: float):
        if not (0.0 <= epsilon <= 1.0):
            raise ConfigurationError("epsilon must lie in [0, 1]")
        self.base = base
        self.epsilon = epsilon

    def probabilities(self, raw_states: np.ndarray) -> np.ndarray:
        return (1.0 - self.epsilon) * self.base.probabilities(raw_states) + (
            self.epsilon / N_ACTIONS
        )

    def actions(self, raw_states: np.ndarray) -> np.ndarray:
        return self.probabilities(raw_states).argmax(axis=1)


class MatrixSeverityPolicy:
    """Policy defined on a latent index recovered from the observation by a
    classifier function; backs the synthetic-cohort oracles."""

    def __init__(self, matrix: np.ndarray, classify):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        self.classify = classify

    def probabilities(self, raw_states: np.ndarray) -> np.ndarray:
        idx = self.classify(np.atleast_2d(raw_states))
        return self.matrix[idx]

    def actions(self, raw_states: np.ndarray) -> np.ndarray:
        return self.probabilities(raw_states).argmax(axis=1)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _init_head_net(rng: np.random.Generator) -> dict[str, np.ndarray]:
    # same trunk as the Q-network, single 25-way linear head (no dueling split)
    params = qnet._init_trunk(rng, bn_momentum=0.99, bn_eps=1e-5)
    params["wo"] = rng.normal(0.0, np.sqrt(1.0 / qnet.HIDDEN), size=(qnet.HIDDEN, N_ACTIONS))
    params["bo"] = np.zeros(N_ACTIONS)
    return params


_HEAD_KEYS = tuple(k for k in qnet.TRAINABLE_KEYS if not k.startswith(("wv", "bv", "wa", "ba"))) + ("wo", "bo")


def _head_forward(params, x, train):
    cache: dict = {}
    h2 = qnet._trunk_forward(params, x, train, cache)
    out = h2 @ params["wo"] + params["bo"]
    if train:
        cache["h2"] = h2
        return out, cache
    return out, None


def _head_backward(params, cache, dout):
    grads = {"wo": cache["h2"].T @ dout, "bo": dout.sum(axis=0)}
    qnet._trunk_backward(params, cache, dout @ params["wo"].T, grads)
    return grads


class BehaviorPolicyModel:
    """Softmax behavior-cloning estimate of the clinician policy with a
    probability floor so importance ratios stay bounded."""

    def __init__(self, params: dict, scaler: FeatureScaler, floor: float):
        self.params = params
        self.scaler = scaler
        self.floor = floor

    def probabilities(self, raw_states: np.ndarray) -> np.ndarray:
        x = self.scaler.transform(np.atleast_2d(raw_states))
        logits, _ = _head_forward(self.params, x, train=False)
        probs = np.maximum(_softmax(logits), self.floor)
        return probs / probs.sum(axis=1, keepdims=True)


def fit_behavior_policy(
    trajectories,
    scaler: FeatureScaler,
    cfg: OpeConfig | None = None,
    seed: int = 0,
) -> BehaviorPolicyModel:
    """Cross-entropy fit of (state -> logged action) on the training split."""
    if not trajectories:
        raise ValidationError("cannot fit a behavior policy on an empty set")
    cfg = cfg or OpeConfig()
    arrays = flatten_transitions(trajectories)
    x_all = scaler.transform(arrays.states)
    y_all = arrays.actions
    n = len(y_all)
    rng = np.random.default_rng(seed)
    params = _init_head_net(rng)
    opt = qnet.adam_init(params, keys=_HEAD_KEYS)
    batch = min(cfg.bc_batch, n)
    for _ in range(cfg.bc_steps):
        idx = rng.integers(0, n, size=batch)
        logits, cache = _head_forward(params, x_all[idx], train=True)
        probs = _softmax(logits)
        dlogits = probs.copy()
        dlogits[np.arange(batch), y_all[idx]] -= 1.0
        grads = _head_backward(params, cache, dlogits / batch)
        qnet.adam_step(params, grads, opt, cfg.bc_lr)
        qnet.commit_bn_stats(params, cache)
    return BehaviorPolicyModel(params, scaler, cfg.behavior_floor)


class FittedQModel:
    """Value model from fitted Q evaluation of a fixed policy."""

    def __init__(self, params: dict, scaler: FeatureScaler, policy):
        self.params = params
        self.scaler = scaler
        self.policy = policy

    def q_values(self, raw_states: np.ndarray) -> np.ndarray:
        x = self.scaler.transform(np.atleast_2d(raw_states))
        q, _ = _head_forward(self.params, x, train=False)
        return q

    def action_values(self, raw_states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        q = self.q_values(raw_states)
        return q[np.arange(len(q)), np.asarray(actions, dtype=np.int64)]

    def state_values(self, raw_states: np.ndarray) -> np.ndarray:
        # V(s) = sum_a pi_e(a|s) Q(s, a); reduces to Q(s, pi_e(s)) when
        # the evaluation policy is deterministic
        q = self.q_values(raw_states)
        return (self.policy.probabilities(np.atleast_2d(raw_states)) * q).sum(axis=1)


def fit_value_model(
    trajectories,
    policy,
    scaler: FeatureScaler,
    gamma: float,
    cfg: OpeConfig | None = None,
    seed: int = 0,
) -> FittedQModel:
    """Fitted Q evaluation: iterate Q <- r + gamma * E_pi Q(s', .) frozen
    between iterations, regressing on the logged (state, action) pairs."""
    if not trajectories:
        raise ValidationError("cannot fit a value model on an empty set")
    cfg = cfg or OpeConfig()
    arrays = flatten_transitions(trajectories)
    n = len(arrays.actions)
    x = scaler.transform(arrays.states)
    x_next = scaler.transform(arrays.next_states)
    pi_next = policy.probabilities(arrays.next_states)  # fixed policy, computed once
    not_terminal = ~arrays.terminals

    rng = np.random.default_rng(seed)
    params = _init_head_net(rng)
    opt = qnet.adam_init(params, keys=_HEAD_KEYS)
    batch = min(cfg.fqe_batch, n)
    for _ in range(cfg.fqe_iterations):
        q_next, _ = _head_forward(params, x_next, train=False)
        targets = arrays.rewards + gamma * not_terminal * (pi_next * q_next).sum(axis=1)
        if not np.all(np.isfinite(targets)):
            raise TrainingDiverged("fitted Q evaluation produced non-finite targets")
        for _ in range(cfg.fqe_steps):
            idx = rng.integers(0, n, size=batch)
            q, cache = _head_forward(params, x[idx], train=True)
            taken = q[np.arange(batch), arrays.actions[idx]]
            err = taken - targets[idx]
            if not np.all(np.isfinite(err)):
                raise TrainingDiverged("fitted Q evaluation regression diverged")
            dq = np.zeros_like(q)
            dq[np.arange(batch), arrays.actions[idx]] = 2.0 * err / batch
            grads = _head_backward(params, cache, dq)
            qnet.adam_step(params, grads, opt, cfg.fqe_lr)
            qnet.commit_bn_stats(params, cache)
    return FittedQModel(params, scaler, policy)


@dataclass(frozen=True)
class DREstimate:
    values: np.ndarray  # one doubly-robust value per trajectory
    mean: float
    stderr: float
    zero_is_fraction: float  # trajectories whose importance product hit zero
    n_trajectories: int

    @classmethod
    def from_values(cls, values: np.ndarray, zero_is: int) -> "DREstimate":
        values = np.asarray(values, dtype=np.float64)
        n = len(values)
        stderr = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return cls(
            values=values,
            mean=float(values.mean()),
            stderr=stderr,
            zero_is_fraction=zero_is / n,
            n_trajectories=n,
        )


def doubly_robust_value(
    trajectories,
    policy,
    behavior,
    value_model,
    gamma: float,
) -> DREstimate:
    """Backward per-trajectory DR recursion with base value 0."""
    if not trajectories:
        raise ValidationError("doubly robust evaluation needs a non-empty test set")
    values = np.empty(len(trajectories))
    zero_is = 0
    for k, traj in enumerate(trajectories):
        arrays = flatten_transitions([traj])
        t_len = len(arrays.actions)
        idx = np.arange(t_len)
        pe = policy.probabilities(arrays.states)[idx, arrays.actions]
        pb = behavior.probabilities(arrays.states)[idx, arrays.actions]
        if np.any(pb <= 0):
            raise RuntimeFailure(
                f"behavior probability hit zero for patient {traj.patient_id}"
            )
        rho = pe / pb
        v_hat = value_model.state_values(arrays.states)
        q_hat = value_model.action_values(arrays.states, arrays.actions)
        v = 0.0
        for t in range(t_len - 1, -1, -1):
            v = v_hat[t] + rho[t] * (arrays.rewards[t] + gamma * v - q_hat[t])
        values[k] = v
        if np.any(rho == 0.0):
            zero_is += 1
        if not np.isfinite(v):
            raise RuntimeFailure(f"non-finite DR value for patient {traj.patient_id}")
    return DREstimate.from_values(values, zero_is)


def behavior_value(trajectories, gamma: float) -> float:
    """Mean discounted return of the logged clinician actions."""
    if not trajectories:
        raise ValidationError("behavior value needs a non-empty test set")
    totals = []
    for traj in trajectories:
        rewards = np.array([tr.reward for tr in traj.transitions])
        totals.append(float((gamma ** np.arange(len(rewards))) @ rewards))
    return float(np.mean(totals))
