"""Dueling MLP Q-function with a hand-derived backward pass.

Architecture: 48 -> 128 affine -> batch norm -> leaky ReLU (slope 0.5)
-> 128 affine -> batch norm -> leaky ReLU, then the 128 hidden units are
split into two 64-unit halves feeding a scalar value head and a 25-way
advantage head. Q(s, a) = V(s) + A(s, a) - mean_a' A(s, a').

All math is float64 numpy. Forward is pure: train-mode batch-norm running
statistics are staged in the cache and committed explicitly by the caller,
which keeps finite-difference checks side-effect free.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ConfigurationError, IngestionError, ValidationError
from .mdp_core import Action, ActionBinning, FeatureScaler, N_ACTIONS, N_FEATURES

HIDDEN = 128
HALF = HIDDEN // 2
LEAKY_SLOPE = 0.5

# running statistics and BN hyperparameters live in the params dict but are
# never touched by the optimizer
TRAINABLE_KEYS = (
    "w1",
    "b1",
    "bn1_gamma",
    "bn1_beta",
    "w2",
    "b2",
    "bn2_gamma",
    "bn2_beta",
    "wv",
    "bv",
    "wa",
    "ba",
)


@dataclass(frozen=True)
class LossConfig:
    q_thresh: float = 20.0
    lambda_reg: float = 0.25
    gamma: float = 0.99
    target_clip: float = 20.0

    def __post_init__(self):
        if self.q_thresh <= 0:
            raise ConfigurationError("q_thresh must be positive")
        if self.target_clip <= 0:
            raise ConfigurationError("target_clip must be positive")
        if self.lambda_reg < 0:
            raise ConfigurationError("lambda_reg must be >= 0")
        if not (0.0 <= self.gamma < 1.0):
            raise ConfigurationError("gamma must lie in [0, 1)")


def _he_leaky(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    # He initialization with the gain for leaky ReLU slope 0.5
    std = np.sqrt(2.0 / (fan_in * (1.0 + LEAKY_SLOPE**2)))
    return rng.normal(0.0, std, size=(fan_in, fan_out))


def _linear_head(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    std = np.sqrt(1.0 / fan_in)
    return rng.normal(0.0, std, size=(fan_in, fan_out))


def _init_trunk(
    rng: np.random.Generator, bn_momentum: float, bn_eps: float
) -> dict[str, np.ndarray]:
    return {
        "w1": _he_leaky(rng, N_FEATURES, HIDDEN),
        "b1": np.zeros(HIDDEN),
        "bn1_gamma": np.ones(HIDDEN),
        "bn1_beta": np.zeros(HIDDEN),
        "bn1_mean": np.zeros(HIDDEN),
        "bn1_var": np.ones(HIDDEN),
        "w2": _he_leaky(rng, HIDDEN, HIDDEN),
        "b2": np.zeros(HIDDEN),
        "bn2_gamma": np.ones(HIDDEN),
        "bn2_beta": np.zeros(HIDDEN),
        "bn2_mean": np.zeros(HIDDEN),
        "bn2_var": np.ones(HIDDEN),
        "bn_momentum": np.float64(bn_momentum),
        "bn_eps": np.float64(bn_eps),
    }


def init_params(
    rng: np.random.Generator, bn_momentum: float = 0.99, bn_eps: float = 1e-5
) -> dict[str, np.ndarray]:
    """Fresh dueling-network parameters (main copy; sync_target clones it)."""
    params = _init_trunk(rng, bn_momentum, bn_eps)
    params.update(
        {
            "wv": _linear_head(rng, HALF, 1),
            "bv": np.zeros(1),
            "wa": _linear_head(rng, HALF, N_ACTIONS),
            "ba": np.zeros(N_ACTIONS),
        }
    )
    return params


def _leaky(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, LEAKY_SLOPE * z)


def _leaky_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, 1.0, LEAKY_SLOPE)


def _bn_forward(params, prefix, z, train, cache):
    eps = float(params["bn_eps"])
    if train:
        mu = z.mean(axis=0)
        var = z.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (z - mu) * inv_std
        mom = float(params["bn_momentum"])
        cache[f"{prefix}_new_mean"] = mom * params[f"{prefix}_mean"] + (1.0 - mom) * mu
        cache[f"{prefix}_new_var"] = mom * params[f"{prefix}_var"] + (1.0 - mom) * var
        cache[f"{prefix}_inv_std"] = inv_std
        cache[f"{prefix}_xhat"] = xhat
    else:
        inv_std = 1.0 / np.sqrt(params[f"{prefix}_var"] + eps)
        xhat = (z - params[f"{prefix}_mean"]) * inv_std
    return params[f"{prefix}_gamma"] * xhat + params[f"{prefix}_beta"]


def _trunk_forward(params, x, train, cache):
    z1 = x @ params["w1"] + params["b1"]
    y1 = _bn_forward(params, "bn1", z1, train, cache)
    h1 = _leaky(y1)
    z2 = h1 @ params["w2"] + params["b2"]
    y2 = _bn_forward(params, "bn2", z2, train, cache)
    h2 = _leaky(y2)
    if train:
        cache.update({"x": x, "y1": y1, "h1": h1, "y2": y2, "h2": h2})
    return h2


def forward(
    params: Mapping[str, np.ndarray], states: np.ndarray, train: bool = False
) -> tuple[np.ndarray, dict | None]:
    """Q-values for a batch of z-scored states.

    Train mode normalizes with batch statistics and stages updated running
    statistics in the returned cache (apply with commit_bn_stats); infer mode
    uses the stored running statistics and returns no cache.
    """
    x = np.asarray(states, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != N_FEATURES:
        raise IngestionError(f"expected {N_FEATURES}-dim states, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise IngestionError("non-finite network input")
    if train and x.shape[0] < 2:
        raise ValidationError("train-mode forward needs batch size >= 2 for batch statistics")

    cache: dict = {}
    h2 = _trunk_forward(params, x, train, cache)
    hv, ha = h2[:, :HALF], h2[:, HALF:]
    v = hv @ params["wv"] + params["bv"]  # (B, 1)
    a = ha @ params["wa"] + params["ba"]  # (B, 25)
    q = v + a - a.mean(axis=1, keepdims=True)
    if train:
        cache.update({"hv": hv, "ha": ha})
        return q, cache
    return q, None


def commit_bn_stats(params: dict, cache: Mapping[str, np.ndarray]) -> None:
    for prefix in ("bn1", "bn2"):
        params[f"{prefix}_mean"] = cache[f"{prefix}_new_mean"]
        params[f"{prefix}_var"] = cache[f"{prefix}_new_var"]


def _bn_backward(params, prefix, dy, cache, grads):
    xhat = cache[f"{prefix}_xhat"]
    inv_std = cache[f"{prefix}_inv_std"]
    grads[f"{prefix}_gamma"] = (dy * xhat).sum(axis=0)
    grads[f"{prefix}_beta"] = dy.sum(axis=0)
    dxhat = dy * params[f"{prefix}_gamma"]
    b = dy.shape[0]
    return (inv_std / b) * (
        b * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
    )


def _trunk_backward(params, cache, dh2, grads):
    dy2 = dh2 * _leaky_grad(cache["y2"])
    dz2 = _bn_backward(params, "bn2", dy2, cache, grads)
    grads["w2"] = cache["h1"].T @ dz2
    grads["b2"] = dz2.sum(axis=0)
    dh1 = dz2 @ params["w2"].T
    dy1 = dh1 * _leaky_grad(cache["y1"])
    dz1 = _bn_backward(params, "bn1", dy1, cache, grads)
    grads["w1"] = cache["x"].T @ dz1
    grads["b1"] = dz1.sum(axis=0)


def _backward_from_dq(params, cache, dq):
    grads: dict[str, np.ndarray] = {}
    da = dq - dq.mean(axis=1, keepdims=True)  # mean-subtraction jacobian
    dv = dq.sum(axis=1, keepdims=True)
    grads["wv"] = cache["hv"].T @ dv
    grads["bv"] = dv.sum(axis=0)
    grads["wa"] = cache["ha"].T @ da
    grads["ba"] = da.sum(axis=0)
    dh2 = np.concatenate([dv @ params["wv"].T, da @ params["wa"].T], axis=1)
    _trunk_backward(params, cache, dh2, grads)
    return grads


def double_q_target(
    main: Mapping[str, np.ndarray],
    target: Mapping[str, np.ndarray],
    scaled_next_states: np.ndarray,
    rewards: np.ndarray,
    terminals: np.ndarray,
    cfg: LossConfig,
) -> np.ndarray:
    """r + gamma * clip(Q(s', argmax_a Q(s', a; theta); theta'), +-target_clip).

    Terminal transitions take the reward exactly; the bootstrap term is
    masked out, so the target never depends on the target network there.
    """
    q_main, _ = forward(main, scaled_next_states, train=False)
    q_target, _ = forward(target, scaled_next_states, train=False)
    a_star = np.argmax(q_main, axis=1)  # lowest flat index wins ties
    bootstrap = np.clip(
        q_target[np.arange(len(a_star)), a_star], -cfg.target_clip, cfg.target_clip
    )
    return rewards + cfg.gamma * bootstrap * (~np.asarray(terminals, dtype=bool))


def loss_and_gradients(
    params: Mapping[str, np.ndarray],
    targets: np.ndarray,
    scaled_states: np.ndarray,
    actions: np.ndarray,
    weights: np.ndarray,
    cfg: LossConfig,
):
    """Weighted squared TD loss plus the out-of-threshold Q penalty.

    loss = mean_i w_i * (target_i - Q(s_i, a_i))^2
         + lambda * mean_i max(|Q(s_i, a_i)| - q_thresh, 0)

    Returns (loss, grads, td_errors, cache); td_errors feed the replay
    priorities, cache carries the staged batch-norm statistics.
    """
    q_all, cache = forward(params, scaled_states, train=True)
    b = q_all.shape[0]
    idx = np.arange(b)
    q_taken = q_all[idx, actions]
    td_errors = targets - q_taken
    penalty = np.maximum(np.abs(q_taken) - cfg.q_thresh, 0.0)
    loss = float(np.mean(weights * td_errors**2) + cfg.lambda_reg * np.mean(penalty))

    dq = np.zeros_like(q_all)
    dq[idx, actions] = (
        -2.0 * weights * td_errors
        + cfg.lambda_reg * np.sign(q_taken) * (np.abs(q_taken) > cfg.q_thresh)
    ) / b
    grads = _backward_from_dq(params, cache, dq)
    return loss, grads, td_errors, cache


def adam_init(params: Mapping[str, np.ndarray], keys=TRAINABLE_KEYS) -> dict:
    return {
        "m": {k: np.zeros_like(params[k]) for k in keys},
        "v": {k: np.zeros_like(params[k]) for k in keys},
        "t": 0,
    }


def adam_step(
    params: dict,
    grads: Mapping[str, np.ndarray],
    state: dict,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Standard Adam update with bias correction, in place."""
    state["t"] += 1
    t = state["t"]
    for k in state["m"]:
        g = grads[k]
        state["m"][k] = beta1 * state["m"][k] + (1.0 - beta1) * g
        state["v"][k] = beta2 * state["v"][k] + (1.0 - beta2) * g**2
        m_hat = state["m"][k] / (1.0 - beta1**t)
        v_hat = state["v"][k] / (1.0 - beta2**t)
        params[k] = params[k] - lr * m_hat / (np.sqrt(v_hat) + eps)


def sync_target(main: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Hard copy of every tensor, batch-norm running statistics included."""
    return {k: np.copy(v) for k, v in main.items()}


def greedy_actions(params: Mapping[str, np.ndarray], scaled_states: np.ndarray) -> np.ndarray:
    q, _ = forward(params, scaled_states, train=False)
    return np.argmax(q, axis=1)


def greedy_action(params: Mapping[str, np.ndarray], scaled_state: np.ndarray) -> Action:
    return Action.from_flat(int(greedy_actions(params, scaled_state)[0]))


_MAGIC = b"SEPTICRL-CKPT-1\n"
SCHEMA_VERSION = 1


@dataclass
class Checkpoint:
    """Everything needed to reproduce inference and resume bookkeeping."""

    params: dict
    opt_state: dict
    scaler: FeatureScaler
    binning: ActionBinning
    meta: dict  # config dict, seed, toolkit version
    schema_version: int = SCHEMA_VERSION

    def greedy_flat(self, raw_states: np.ndarray) -> np.ndarray:
        """Greedy flat action indices for raw (unscaled) states."""
        return greedy_actions(self.params, self.scaler.transform(raw_states))

    def q_values(self, raw_states: np.ndarray) -> np.ndarray:
        q, _ = forward(self.params, self.scaler.transform(raw_states), train=False)
        return q

    def _arrays(self) -> dict[str, np.ndarray]:
        arrays = {f"theta.{k}": np.asarray(v, dtype=np.float64) for k, v in self.params.items()}
        for mk in ("m", "v"):
            for k, v in self.opt_state[mk].items():
                arrays[f"adam_{mk}.{k}"] = np.asarray(v, dtype=np.float64)
        arrays["scaler.means"] = np.asarray(self.scaler.means, dtype=np.float64)
        arrays["scaler.stds"] = np.asarray(self.scaler.stds, dtype=np.float64)
        return arrays

    def to_bytes(self) -> bytes:
        arrays = self._arrays()
        names = sorted(arrays)
        header = {
            "schema_version": self.schema_version,
            "adam_t": int(self.opt_state["t"]),
            "binning": {
                "iv_thresholds": list(self.binning.iv_thresholds),
                "vp_thresholds": list(self.binning.vp_thresholds),
            },
            "meta": self.meta,
            "arrays": [
                {"name": n, "shape": list(arrays[n].shape)} for n in names
            ],
        }
        head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        buf = io.BytesIO()
        buf.write(_MAGIC)
        buf.write(len(head).to_bytes(8, "little"))
        buf.write(head)
        for n in names:
            buf.write(np.ascontiguousarray(arrays[n]).tobytes())
        return buf.getvalue()

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[: len(_MAGIC)] != _MAGIC:
            raise IngestionError("not a septic-rl checkpoint (bad magic)")
        off = len(_MAGIC)
        head_len = int.from_bytes(blob[off : off + 8], "little")
        off += 8
        header = json.loads(blob[off : off + head_len].decode("utf-8"))
        off += head_len
        if header["schema_version"] != SCHEMA_VERSION:
            raise IngestionError(
                f"unsupported checkpoint schema version {header['schema_version']}"
            )
        arrays: dict[str, np.ndarray] = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            nbytes = count * 8
            arr = np.frombuffer(blob[off : off + nbytes], dtype=np.float64).reshape(shape)
            arrays[spec["name"]] = arr.copy()
            off += nbytes
        params = {
            k[len("theta.") :]: v for k, v in arrays.items() if k.startswith("theta.")
        }
        opt_state = {
            "m": {k[len("adam_m.") :]: v for k, v in arrays.items() if k.startswith("adam_m.")},
            "v": {k[len("adam_v.") :]: v for k, v in arrays.items() if k.startswith("adam_v.")},
            "t": int(header["adam_t"]),
        }
        scaler = FeatureScaler(means=arrays["scaler.means"], stds=arrays["scaler.stds"])
        binning = ActionBinning(
            iv_thresholds=tuple(header["binning"]["iv_thresholds"]),
            vp_thresholds=tuple(header["binning"]["vp_thresholds"]),
        )
        return cls(
            params=params,
            opt_state=opt_state,
            scaler=scaler,
            binning=binning,
            meta=header["meta"],
            schema_version=header["schema_version"],
        )

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())
