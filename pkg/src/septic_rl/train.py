"""Offline training: stratified split, replay filling, and the batch loop."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import qnet
from .errors import ConfigurationError, TrainingDiverged, ValidationError
from .mdp_core import (
    ActionBinning,
    FeatureScaler,
    Outcome,
    RewardConfig,
    Trajectory,
    flatten_transitions,
)
from .qnet import Checkpoint, LossConfig
from .replay import PrioritizedReplay, ReplayConfig

METRICS_COLUMNS = ("batch", "mean_loss", "mean_abs_td", "probe_mean_max_q")


@dataclass(frozen=True)
class TrainingConfig:
    batches: int = 80000
    batch_size: int = 32
    split_fraction: float = 0.8
    seed: int = 0
    eval_every: int = 1000
    learning_rate: float = 1e-4
    sync_every: int = 1000
    probe_size: int = 256
    bn_momentum: float = 0.99
    bn_eps: float = 1e-5
    loss: LossConfig = field(default_factory=LossConfig)
    replay: ReplayConfig = field(default_factory=ReplayConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)

    def __post_init__(self):
        if not (0.0 < self.split_fraction < 1.0):
            raise ConfigurationError("split_fraction must lie strictly between 0 and 1")
        if self.batches < 0 or self.batch_size < 2:
            raise ConfigurationError("batches must be >= 0 and batch_size >= 2")
        if self.eval_every < 1 or self.sync_every < 1:
            raise ConfigurationError("eval_every and sync_every must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")


def split_patient_ids(
    outcome_by_id: dict[str, Outcome], split_fraction: float, seed: int
) -> tuple[list[str], list[str]]:
    """Patient-level stratified split: per-outcome largest-remainder quotas,
    deterministic given the seed."""
    groups: dict[Outcome, list[str]] = {}
    for pid, outcome in outcome_by_id.items():
        groups.setdefault(outcome, []).append(pid)
    if len(groups) < 2:
        raise ValidationError(
            "stratified split needs at least one trajectory of each outcome"
        )
    rng = np.random.default_rng(seed)
    total = len(outcome_by_id)
    target_train = int(round(split_fraction * total))

    order = sorted(groups, key=lambda o: o.value)  # deterministic group iteration
    quotas = {o: split_fraction * len(groups[o]) for o in order}
    counts = {o: int(np.floor(quotas[o])) for o in order}
    leftover = target_train - sum(counts.values())
    by_remainder = sorted(order, key=lambda o: (quotas[o] - counts[o]), reverse=True)
    for o in by_remainder:
        if leftover <= 0:
            break
        if counts[o] < len(groups[o]):
            counts[o] += 1
            leftover -= 1

    train_ids: list[str] = []
    test_ids: list[str] = []
    for o in order:
        ids = sorted(groups[o])
        rng.shuffle(ids)
        train_ids.extend(ids[: counts[o]])
        test_ids.extend(ids[counts[o] :])
    return sorted(train_ids), sorted(test_ids)


def stratified_split(
    trajectories: Sequence[Trajectory], split_fraction: float, seed: int
) -> tuple[list[Trajectory], list[Trajectory]]:
    """Split whole patients so both sets carry proportionate outcomes."""
    outcome_by_id = {tr.patient_id: tr.outcome for tr in trajectories}
    if len(outcome_by_id) != len(trajectories):
        raise ValidationError("duplicate patient_id in trajectory list")
    train_ids, test_ids = split_patient_ids(outcome_by_id, split_fraction, seed)
    by_id = {tr.patient_id: tr for tr in trajectories}
    return [by_id[i] for i in train_ids], [by_id[i] for i in test_ids]


def _beta_schedule(cfg: ReplayConfig, batch: int, total_batches: int) -> float:
    if total_batches <= 1:
        return cfg.beta_final
    frac = batch / (total_batches - 1)
    return cfg.beta + (cfg.beta_final - cfg.beta) * frac


def train(
    train_trajectories: Sequence[Trajectory],
    cfg: TrainingConfig,
    binning: ActionBinning,
    meta: dict | None = None,
) -> tuple[Checkpoint, list[dict]]:
    """Run the offline DQN loop and return the checkpoint plus metrics rows.

    The replay buffer is filled once with the whole training split at maximal
    priority; each batch samples with PER, computes double-DQN targets,
    applies one Adam step, and feeds |TD| back as priorities. Deterministic
    given (config, data): identical runs produce identical checkpoints.
    """
    if not train_trajectories:
        raise ValidationError("training set is empty")
    arrays = flatten_transitions(train_trajectories)
    n = len(arrays.actions)
    if cfg.batch_size > n:
        raise ConfigurationError(
            f"batch_size {cfg.batch_size} exceeds training-set size {n}"
        )
    scaler = FeatureScaler.fit(arrays.states)
    states = scaler.transform(arrays.states)
    next_states = scaler.transform(arrays.next_states)
    rewards = arrays.rewards
    actions = arrays.actions
    terminals = arrays.terminals

    seq = np.random.SeedSequence(cfg.seed)
    init_seed, sample_seed = seq.spawn(2)
    params = qnet.init_params(
        np.random.default_rng(init_seed), cfg.bn_momentum, cfg.bn_eps
    )
    target = qnet.sync_target(params)
    opt_state = qnet.adam_init(params)

    capacity = cfg.replay.capacity or n
    if capacity < n:
        raise ConfigurationError(
            f"replay capacity {capacity} is smaller than the training set ({n})"
        )
    buffer = PrioritizedReplay(capacity, cfg.replay)
    for ref in range(n):
        buffer.insert(ref, 1.0)

    probe = states[: min(cfg.probe_size, n)]
    sample_rng = np.random.default_rng(sample_seed)
    metrics: list[dict] = []
    interval_loss: list[float] = []
    interval_td: list[float] = []

    for batch_idx in range(cfg.batches):
        buffer.beta = _beta_schedule(cfg.replay, batch_idx, cfg.batches)
        batch = buffer.sample(cfg.batch_size, sample_rng)
        refs = batch.refs
        targets = qnet.double_q_target(
            params, target, next_states[refs], rewards[refs], terminals[refs], cfg.loss
        )
        loss, grads, td_errors, cache = qnet.loss_and_gradients(
            params, targets, states[refs], actions[refs], batch.weights, cfg.loss
        )
        if not np.isfinite(loss):
            raise TrainingDiverged(
                f"non-finite loss at batch {batch_idx}; sampled refs {refs.tolist()}"
            )
        qnet.adam_step(params, grads, opt_state, cfg.learning_rate)
        qnet.commit_bn_stats(params, cache)
        for slot, td in zip(batch.slots, td_errors):
            buffer.update_priority(int(slot), float(td))
        if (batch_idx + 1) % cfg.sync_every == 0:
            target = qnet.sync_target(params)

        interval_loss.append(loss)
        interval_td.append(float(np.mean(np.abs(td_errors))))
        if (batch_idx + 1) % cfg.eval_every == 0:
            probe_q, _ = qnet.forward(params, probe, train=False)
            metrics.append(
                {
                    "batch": batch_idx + 1,
                    "mean_loss": float(np.mean(interval_loss)),
                    "mean_abs_td": float(np.mean(interval_td)),
                    "probe_mean_max_q": float(probe_q.max(axis=1).mean()),
                }
            )
            if not np.isfinite(metrics[-1]["probe_mean_max_q"]):
                raise TrainingDiverged(f"non-finite probe Q at batch {batch_idx + 1}")
            interval_loss.clear()
            interval_td.clear()

    checkpoint = Checkpoint(
        params=params,
        opt_state=opt_state,
        scaler=scaler,
        binning=binning,
        meta=meta or {},
    )
    return checkpoint, metrics


def write_metrics_csv(path, metrics: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for row in metrics:
            writer.writerow(
                [
                    row["batch"],
                    repr(row["mean_loss"]),
                    repr(row["mean_abs_td"]),
                    repr(row["probe_mean_max_q"]),
                ]
            )
