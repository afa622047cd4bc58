"""State/action/reward data model and trajectory assembly.

Patients are observed as 48-dimensional feature vectors at a 4-hour
resolution. Treatments are pairs of (IV fluid bin, vasopressor bin) on a
5x5 grid where bin 0 means no drug and bins 1-4 are quartiles of the
non-zero dose distribution. Intermediate rewards are shaped from SOFA and
lactate changes; the terminal transition carries +/-terminal_magnitude
depending on survival.
"""

from __future__ import annotations

import csv
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError, IngestionError

# Ordered schema of the 48 observable features: demographics/static block,
# lab values, vital signs, intake/output events, and the timestep counter.
FEATURE_NAMES: tuple[str, ...] = (
    # demographics / static
    "shock_index",
    "elixhauser",
    "sirs",
    "gender",
    "readmission",
    "gcs",
    "sofa",
    "age",
    # lab values
    "albumin",
    "arterial_ph",
    "calcium",
    "glucose",
    "hemoglobin",
    "magnesium",
    "ptt",
    "potassium",
    "sgpt",
    "arterial_blood_gas",
    "bun",
    "chloride",
    "bicarbonate",
    "inr",
    "sodium",
    "arterial_lactate",
    "co2",
    "creatinine",
    "ionised_calcium",
    "pt",
    "platelets_count",
    "sgot",
    "total_bilirubin",
    "white_blood_cell_count",
    # vital signs
    "diastolic_bp",
    "systolic_bp",
    "mean_bp",
    "paco2",
    "pao2",
    "fio2",
    "pao2_fio2_ratio",
    "respiratory_rate",
    "temperature_celsius",
    "weight_kg",
    "heart_rate",
    "spo2",
    # intake / output events
    "fluid_output_4h",
    "total_fluid_output",
    "mechanical_ventilation",
    # miscellaneous
    "timestep",
)

N_FEATURES = len(FEATURE_NAMES)
SOFA_INDEX = FEATURE_NAMES.index("sofa")
LACTATE_INDEX = FEATURE_NAMES.index("arterial_lactate")

N_BINS = 5
N_ACTIONS = N_BINS * N_BINS

CSV_COLUMNS: tuple[str, ...] = (
    "patient_id",
    "t",
    *FEATURE_NAMES,
    "iv_dose_raw",
    "vp_dose_raw",
    "outcome",
)


class Outcome(Enum):
    SURVIVED = "survived"
    DIED = "died"


@dataclass(frozen=True)
class StateVector:
    """One patient observation: 48 finite reals following FEATURE_NAMES."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.shape != (N_FEATURES,):
            raise IngestionError(
                f"state vector must have exactly {N_FEATURES} features, got shape {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise IngestionError("state vector contains non-finite feature")
        object.__setattr__(self, "values", arr)

    @property
    def sofa(self) -> float:
        return float(self.values[SOFA_INDEX])

    @property
    def lactate(self) -> float:
        return float(self.values[LACTATE_INDEX])

    def feature(self, name: str) -> float:
        return float(self.values[FEATURE_NAMES.index(name)])


@dataclass(frozen=True)
class Action:
    """Treatment decision: (iv_bin, vp_bin) on the 5x5 grid.

    The canonical flat index is 5 * iv_bin + vp_bin.
    """

    iv_bin: int
    vp_bin: int

    def __post_init__(self):
        if not (0 <= self.iv_bin < N_BINS and 0 <= self.vp_bin < N_BINS):
            raise ValueError(f"action bins out of range: ({self.iv_bin}, {self.vp_bin})")

    @property
    def flat_index(self) -> int:
        return N_BINS * self.iv_bin + self.vp_bin

    @classmethod
    def from_flat(cls, flat_index: int) -> "Action":
        if not 0 <= flat_index < N_ACTIONS:
            raise ValueError(f"flat action index out of range: {flat_index}")
        return cls(iv_bin=flat_index // N_BINS, vp_bin=flat_index % N_BINS)


@dataclass(frozen=True)
class Transition:
    state: StateVector
    action: Action
    reward: float
    next_state: StateVector
    terminal: bool
    patient_id: str
    t: int

    def __post_init__(self):
        if not math.isfinite(self.reward):
            raise IngestionError(f"non-finite reward for patient {self.patient_id} at t={self.t}")


@dataclass(frozen=True)
class Trajectory:
    patient_id: str
    transitions: tuple[Transition, ...]
    outcome: Outcome

    def __len__(self) -> int:
        return len(self.transitions)


@dataclass(frozen=True)
class RewardConfig:
    """Shaping constants for the clinical reward.

    c0 penalizes a flat-but-nonzero SOFA, c1 scales SOFA changes, c2 scales
    the tanh-capped lactate change. terminal_magnitude is the end-of-stay
    bonus/penalty and must dominate the intermediate terms.
    """

    c0: float = -0.025
    c1: float = -0.125
    c2: float = -2.0
    terminal_magnitude: float = 15.0

    def __post_init__(self):
        if not self.terminal_magnitude > 0:
            raise ConfigurationError("terminal_magnitude must be positive")


@dataclass(frozen=True)
class ActionBinning:
    """Quartile cut-points (Q1, Q2, Q3) of the strictly positive doses."""

    iv_thresholds: tuple[float, float, float]
    vp_thresholds: tuple[float, float, float]

    def __post_init__(self):
        for name, th in (("iv", self.iv_thresholds), ("vp", self.vp_thresholds)):
            if len(th) != 3:
                raise ConfigurationError(f"{name} thresholds must have 3 entries")
            if not all(math.isfinite(x) and x > 0 for x in th):
                raise ConfigurationError(f"{name} thresholds must be positive and finite")
            if not (th[0] < th[1] < th[2]):
                raise ConfigurationError(
                    f"{name} thresholds must be strictly ascending, got {th}"
                )


def fit_binning(
    raw_doses_iv: Sequence[float], raw_doses_vp: Sequence[float]
) -> ActionBinning:
    """Fit per-drug quartile thresholds from the strictly positive doses.

    Zeros are excluded; the 25th/50th/75th percentiles use linear
    interpolation. Fewer than 4 positive doses for a drug is a
    configuration error naming that drug.
    """

    def thresholds(doses: Sequence[float], drug: str) -> tuple[float, float, float]:
        arr = np.asarray(doses, dtype=np.float64)
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ConfigurationError(f"{drug} doses must be finite and non-negative")
        positive = arr[arr > 0]
        if positive.size < 4:
            raise ConfigurationError(
                f"fewer than 4 positive {drug} doses ({positive.size}); cannot fit quartiles"
            )
        q1, q2, q3 = np.percentile(positive, [25.0, 50.0, 75.0])
        return (float(q1), float(q2), float(q3))

    return ActionBinning(
        iv_thresholds=thresholds(raw_doses_iv, "intravenous-fluid"),
        vp_thresholds=thresholds(raw_doses_vp, "vasopressor"),
    )


def _dose_to_bin(dose: float, thresholds: tuple[float, float, float]) -> int:
    if not math.isfinite(dose) or dose < 0:
        raise IngestionError(f"dose must be finite and non-negative, got {dose}")
    if dose == 0:
        return 0
    # dose <= Q_k falls in the lower bin (boundary inclusive below)
    return int(np.searchsorted(thresholds, dose, side="left")) + 1


def discretize(dose_iv: float, dose_vp: float, binning: ActionBinning) -> Action:
    """Map raw doses to the 5x5 action grid; zero dose is always bin 0."""
    return Action(
        iv_bin=_dose_to_bin(dose_iv, binning.iv_thresholds),
        vp_bin=_dose_to_bin(dose_vp, binning.vp_thresholds),
    )


def reward_intermediate(s_t: StateVector, s_t1: StateVector, cfg: RewardConfig) -> float:
    """Shaped reward between consecutive observations.

    c0 * 1[SOFA unchanged and > 0] + c1 * dSOFA + c2 * tanh(dLactate).
    Bounded by |c0| + |c1| * |dSOFA| + |c2|; with defaults it cannot eclipse
    the terminal reward.
    """
    sofa_t, sofa_t1 = s_t.sofa, s_t1.sofa
    flat_and_sick = 1.0 if (sofa_t1 == sofa_t and sofa_t1 > 0) else 0.0
    return (
        cfg.c0 * flat_and_sick
        + cfg.c1 * (sofa_t1 - sofa_t)
        + cfg.c2 * math.tanh(s_t1.lactate - s_t.lactate)
    )


def reward_terminal(outcome: Outcome, cfg: RewardConfig) -> float:
    """End-of-stay reward: +magnitude for survival, -magnitude for death."""
    sign = 1.0 if outcome is Outcome.SURVIVED else -1.0
    return sign * cfg.terminal_magnitude


@dataclass(frozen=True)
class RawTimestep:
    """One ingested CSV row before transition assembly."""

    patient_id: str
    t: int
    features: np.ndarray
    iv_dose_raw: float
    vp_dose_raw: float
    outcome: str  # "survived", "died", or "" on non-final rows


@dataclass(frozen=True)
class RejectedPatient:
    patient_id: str
    reason: str


@dataclass(frozen=True)
class TrajectoryBuildResult:
    trajectories: tuple[Trajectory, ...]
    rejections: tuple[RejectedPatient, ...]

    @property
    def n_transitions(self) -> int:
        return sum(len(tr) for tr in self.trajectories)


def _build_one(
    patient_id: str,
    rows: list[RawTimestep],
    binning: ActionBinning,
    cfg: RewardConfig,
) -> Trajectory:
    for i, row in enumerate(rows):
        if row.t != i:
            raise IngestionError(
                f"timesteps must be consecutive from 0; row {i} has t={row.t}"
            )
        if i < len(rows) - 1 and row.outcome != "":
            raise IngestionError(f"outcome set on non-final row t={row.t}")
    final = rows[-1]
    if final.outcome not in (Outcome.SURVIVED.value, Outcome.DIED.value):
        raise IngestionError(f"missing or invalid outcome on final row: {final.outcome!r}")
    outcome = Outcome(final.outcome)

    states = [StateVector(row.features) for row in rows]
    try:
        actions = [discretize(row.iv_dose_raw, row.vp_dose_raw, binning) for row in rows]
    except IngestionError as exc:
        raise IngestionError(f"bad dose: {exc}") from exc

    transitions: list[Transition] = []
    for i in range(len(rows) - 1):
        transitions.append(
            Transition(
                state=states[i],
                action=actions[i],
                reward=reward_intermediate(states[i], states[i + 1], cfg),
                next_state=states[i + 1],
                terminal=False,
                patient_id=patient_id,
                t=i,
            )
        )
    # Terminal transition: next_state duplicates the final observation (inert
    # under the terminal target mask) and the duplicated pair contributes no
    # intermediate reward, so the reward is exactly +/-terminal_magnitude.
    transitions.append(
        Transition(
            state=states[-1],
            action=actions[-1],
            reward=reward_terminal(outcome, cfg),
            next_state=states[-1],
            terminal=True,
            patient_id=patient_id,
            t=len(rows) - 1,
        )
    )
    return Trajectory(patient_id=patient_id, transitions=tuple(transitions), outcome=outcome)


def build_trajectories(
    records: Iterable[RawTimestep],
    binning: ActionBinning,
    cfg: RewardConfig,
) -> TrajectoryBuildResult:
    """Assemble per-patient trajectories from time-ordered rows.

    Patients failing validation (non-consecutive timesteps, non-finite
    features, bad doses, missing outcome) are rejected with a reason and
    reported, never silently dropped. Output is ordered by patient_id.
    """
    grouped: "OrderedDict[str, list[RawTimestep]]" = OrderedDict()
    for row in records:
        grouped.setdefault(row.patient_id, []).append(row)

    trajectories: list[Trajectory] = []
    rejections: list[RejectedPatient] = []
    for patient_id in sorted(grouped):
        try:
            trajectories.append(_build_one(patient_id, grouped[patient_id], binning, cfg))
        except IngestionError as exc:
            rejections.append(RejectedPatient(patient_id=patient_id, reason=str(exc)))
    return TrajectoryBuildResult(
        trajectories=tuple(trajectories), rejections=tuple(rejections)
    )


def load_timesteps_csv(path) -> list[RawTimestep]:
    """Read the per-timestep trajectory CSV (strict schema, UTF-8, '.' decimals)."""
    rows: list[RawTimestep] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file, header row is mandatory")
        if tuple(header) != CSV_COLUMNS:
            raise IngestionError(
                f"{path}: header does not match the trajectory schema "
                f"(expected {len(CSV_COLUMNS)} columns starting with "
                f"'patient_id,t,{FEATURE_NAMES[0]},...')"
            )
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(CSV_COLUMNS):
                raise IngestionError(f"{path}:{lineno}: expected {len(CSV_COLUMNS)} fields, got {len(rec)}")
            try:
                t = int(rec[1])
                features = np.array([float(x) for x in rec[2 : 2 + N_FEATURES]], dtype=np.float64)
                iv = float(rec[2 + N_FEATURES])
                vp = float(rec[3 + N_FEATURES])
            except ValueError as exc:
                raise IngestionError(f"{path}:{lineno}: unparsable numeric field ({exc})") from exc
            rows.append(
                RawTimestep(
                    patient_id=rec[0],
                    t=t,
                    features=features,
                    iv_dose_raw=iv,
                    vp_dose_raw=vp,
                    outcome=rec[-1],
                )
            )
    return rows


def write_timesteps_csv(path, rows: Iterable[RawTimestep]) -> None:
    """Write rows in the ingestion schema. repr() formatting round-trips floats."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row.patient_id,
                    row.t,
                    *[repr(float(v)) for v in row.features],
                    repr(float(row.iv_dose_raw)),
                    repr(float(row.vp_dose_raw)),
                    row.outcome,
                ]
            )


class TransitionArrays(NamedTuple):
    """Columnar view of a transition set, used by training and evaluation."""

    states: np.ndarray  # (N, 48)
    actions: np.ndarray  # (N,) flat indices
    rewards: np.ndarray  # (N,)
    next_states: np.ndarray  # (N, 48)
    terminals: np.ndarray  # (N,) bool


def flatten_transitions(trajectories: Sequence[Trajectory]) -> TransitionArrays:
    transitions = [tr for traj in trajectories for tr in traj.transitions]
    n = len(transitions)
    states = np.empty((n, N_FEATURES), dtype=np.float64)
    next_states = np.empty((n, N_FEATURES), dtype=np.float64)
    actions = np.empty(n, dtype=np.int64)
    rewards = np.empty(n, dtype=np.float64)
    terminals = np.empty(n, dtype=bool)
    for i, tr in enumerate(transitions):
        states[i] = tr.state.values
        next_states[i] = tr.next_state.values
        actions[i] = tr.action.flat_index
        rewards[i] = tr.reward
        terminals[i] = tr.terminal
    return TransitionArrays(states, actions, rewards, next_states, terminals)


@dataclass(frozen=True)
class FeatureScaler:
    """Per-feature z-scoring, fit on the training split only."""

    means: np.ndarray
    stds: np.ndarray

    @classmethod
    def fit(cls, states: np.ndarray) -> "FeatureScaler":
        means = states.mean(axis=0)
        stds = states.std(axis=0)
        stds = np.where(stds > 0, stds, 1.0)  # constant features pass through
        return cls(means=means, stds=stds)

    def transform(self, states: np.ndarray) -> np.ndarray:
        return (np.asarray(states, dtype=np.float64) - self.means) / self.stds
