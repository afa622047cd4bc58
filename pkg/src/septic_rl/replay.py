"""Prioritized experience replay over a sum tree.

Leaves store priorities raised to the alpha exponent; internal nodes store
subtree sums so proportional sampling is a prefix-sum descent. Sampling is
stratified: the total mass is split into batch_size equal segments with one
uniform draw each. Importance weights (size * P)^-beta are normalized by
the batch maximum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, ValidationError


@dataclass(frozen=True)
class ReplayConfig:
    alpha: float = 0.6
    beta: float = 0.4
    beta_final: float = 1.0
    epsilon_priority: float = 1e-2
    capacity: int = 0  # 0 means "size of the dataset", resolved by the trainer

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigurationError("alpha must be >= 0")
        if not (0.0 <= self.beta <= 1.0 and 0.0 <= self.beta_final <= 1.0):
            raise ConfigurationError("beta must lie in [0, 1]")
        if self.epsilon_priority <= 0:
            raise ConfigurationError("epsilon_priority must be positive")
        if self.capacity < 0:
            raise ConfigurationError("capacity must be >= 0")


def _next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


class SumTree:
    """Complete binary tree whose internal nodes hold child sums.

    The leaf count is padded to a power of two; parents are recomputed from
    their children on every update, so the sum invariant never drifts.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigurationError("sum tree capacity must be >= 1")
        self.capacity = _next_pow2(capacity)
        self.nodes = np.zeros(2 * self.capacity - 1, dtype=np.float64)

    @property
    def total(self) -> float:
        return float(self.nodes[0])

    def get(self, leaf: int) -> float:
        return float(self.nodes[leaf + self.capacity - 1])

    def set(self, leaf: int, value: float) -> None:
        if not np.isfinite(value) or value < 0:
            raise ValidationError(f"leaf value must be finite and >= 0, got {value}")
        idx = leaf + self.capacity - 1
        self.nodes[idx] = value
        while idx > 0:
            idx = (idx - 1) // 2
            self.nodes[idx] = self.nodes[2 * idx + 1] + self.nodes[2 * idx + 2]

    def find(self, value: float) -> int:
        """Return the leaf whose prefix-sum interval (lo, hi] contains value."""
        idx = 0
        while 2 * idx + 1 < len(self.nodes):
            left = 2 * idx + 1
            left_sum = self.nodes[left]
            if value <= left_sum and left_sum > 0:
                idx = left
            else:
                value -= left_sum
                idx = left + 1
        return idx - (self.capacity - 1)


class SampledBatch(NamedTuple):
    slots: np.ndarray  # (B,) slot ids handed back to update_priority
    refs: np.ndarray  # (B,) transition-store indices
    probabilities: np.ndarray  # (B,) leaf / root
    weights: np.ndarray  # (B,) IS weights, max-normalized to 1


class PrioritizedReplay:
    """Proportional PER buffer; single writer, single sampler."""

    def __init__(self, capacity: int, config: ReplayConfig | None = None):
        if capacity < 1:
            raise ConfigurationError("replay capacity must be >= 1")
        self.config = config or ReplayConfig()
        self.capacity = capacity
        self.tree = SumTree(capacity)
        self.beta = self.config.beta
        self.size = 0
        self.write_cursor = 0
        self.max_priority = 1.0  # pre-alpha scale
        self.stale_updates = 0
        self._refs = np.full(capacity, -1, dtype=np.int64)
        self._slot_seq = np.full(capacity, -1, dtype=np.int64)
        self._insert_count = 0

    def insert(self, transition_ref: int, priority: float | None = None) -> int:
        """Store a transition reference; returns a slot id for later updates.

        New transitions default to the current maximum priority so each gets
        sampled before its priority reflects a measured TD error. The oldest
        slot is overwritten once full.
        """
        if priority is None:
            priority = self.max_priority
        if not np.isfinite(priority) or priority <= 0:
            raise ValidationError(f"priority must be finite and positive, got {priority}")
        leaf = self.write_cursor
        slot = self._insert_count
        self._refs[leaf] = transition_ref
        self._slot_seq[leaf] = slot
        self.tree.set(leaf, priority**self.config.alpha)
        self.max_priority = max(self.max_priority, priority)
        self._insert_count += 1
        self.write_cursor = (self.write_cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return slot

    def _leaf_for_slot(self, slot: int) -> int | None:
        leaf = slot % self.capacity
        if self._slot_seq[leaf] != slot:
            return None  # slot has been overwritten since it was handed out
        return leaf

    def update_priority(self, slot: int, td_error: float) -> None:
        """Set priority to (|td_error| + epsilon)^alpha; stale slots are counted, not errors."""
        if not np.isfinite(td_error):
            raise ValidationError(f"td_error must be finite, got {td_error}")
        leaf = self._leaf_for_slot(slot)
        if leaf is None:
            self.stale_updates += 1
            return
        priority = abs(td_error) + self.config.epsilon_priority
        self.tree.set(leaf, priority**self.config.alpha)
        self.max_priority = max(self.max_priority, priority)

    def sample(self, batch_size: int, rng: np.random.Generator) -> SampledBatch:
        if self.size == 0:
            raise ValidationError("cannot sample from an empty replay buffer")
        if batch_size < 1 or batch_size > self.size:
            raise ValidationError(
                f"batch_size must be in [1, {self.size}], got {batch_size}"
            )
        total = self.tree.total
        if total <= 0:
            raise ValidationError("sum tree has zero total priority")
        segment = total / batch_size
        slots = np.empty(batch_size, dtype=np.int64)
        refs = np.empty(batch_size, dtype=np.int64)
        probs = np.empty(batch_size, dtype=np.float64)
        draws = rng.uniform(0.0, segment, size=batch_size)
        for k in range(batch_size):
            leaf = self.tree.find(k * segment + draws[k])
            slots[k] = self._slot_seq[leaf]
            refs[k] = self._refs[leaf]
            probs[k] = self.tree.get(leaf) / total
        weights = (self.size * probs) ** (-self.beta)
        weights /= weights.max()
        return SampledBatch(slots=slots, refs=refs, probabilities=probs, weights=weights)
