"""Synthetic septic-patient cohorts from a known ground-truth MDP.

A latent severity chain (default 8 levels) drives everything: treatment
actions shift the severity distribution, death/discharge hazards terminate
episodes, and each timestep emits the 48 observable features. SOFA and
lactate are deterministic monotone functions of severity, so rewards
recomputed from the emitted observations coincide exactly with the latent
chain's rewards and a nearest-SOFA classifier recovers severity exactly.
The remaining features are severity-correlated noise, which keeps the
learning problem a real function-approximation task.

Because the latent chain is small and fully known, value iteration and
exact policy evaluation provide oracles for end-to-end validation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError
from .mdp_core import (
    FEATURE_NAMES,
    LACTATE_INDEX,
    N_ACTIONS,
    N_BINS,
    N_FEATURES,
    RawTimestep,
    RewardConfig,
    SOFA_INDEX,
    StateVector,
    reward_intermediate,
)

# Per-feature emission profile: baseline at severity 0, drift per severity
# level, noise scale, and a plausibility clip range. SOFA, lactate and the
# specials listed below are handled separately.
_PROFILE = {
    "shock_index": (0.70, 0.060, 0.08, 0.2, 2.5),
    "elixhauser": (4.0, 0.30, 1.8, 0.0, 15.0),
    "sirs": (1.2, 0.30, 0.5, 0.0, 4.0),
    "gcs": (14.5, -1.10, 1.0, 3.0, 15.0),
    "age": (64.0, 0.0, 15.0, 18.0, 95.0),
    "albumin": (3.6, -0.12, 0.35, 1.0, 5.5),
    "arterial_ph": (7.41, -0.018, 0.03, 6.8, 7.7),
    "calcium": (8.8, -0.10, 0.5, 5.5, 11.0),
    "glucose": (125.0, 7.0, 28.0, 40.0, 500.0),
    "hemoglobin": (11.5, -0.25, 1.3, 4.0, 18.0),
    "magnesium": (2.0, 0.03, 0.2, 0.8, 4.0),
    "ptt": (32.0, 2.5, 6.0, 15.0, 120.0),
    "potassium": (4.0, 0.08, 0.4, 2.0, 7.0),
    "sgpt": (38.0, 9.0, 25.0, 5.0, 800.0),
    "arterial_blood_gas": (0.0, -0.8, 2.0, -20.0, 15.0),
    "bun": (18.0, 3.5, 7.0, 3.0, 120.0),
    "chloride": (104.0, 0.4, 4.0, 85.0, 125.0),
    "bicarbonate": (24.0, -1.0, 3.0, 8.0, 40.0),
    "inr": (1.1, 0.10, 0.3, 0.8, 8.0),
    "sodium": (139.0, 0.3, 4.0, 120.0, 160.0),
    "co2": (25.0, -0.9, 3.0, 8.0, 45.0),
    "creatinine": (0.9, 0.30, 0.5, 0.3, 8.0),
    "ionised_calcium": (1.12, -0.015, 0.07, 0.7, 1.5),
    "pt": (13.0, 1.0, 2.5, 9.0, 50.0),
    "platelets_count": (250.0, -16.0, 70.0, 15.0, 700.0),
    "sgot": (40.0, 11.0, 28.0, 8.0, 900.0),
    "total_bilirubin": (0.8, 0.45, 0.9, 0.1, 25.0),
    "white_blood_cell_count": (9.0, 1.6, 3.2, 0.5, 50.0),
    "diastolic_bp": (68.0, -2.2, 9.0, 30.0, 120.0),
    "systolic_bp": (124.0, -4.5, 14.0, 60.0, 220.0),
    "mean_bp": (87.0, -3.0, 10.0, 40.0, 150.0),
    "paco2": (40.0, 0.6, 6.0, 15.0, 90.0),
    "pao2": (95.0, -3.5, 20.0, 40.0, 300.0),
    "fio2": (0.32, 0.05, 0.08, 0.21, 1.0),
    "pao2_fio2_ratio": (300.0, -22.0, 60.0, 40.0, 600.0),
    "respiratory_rate": (16.0, 1.5, 3.5, 6.0, 50.0),
    "temperature_celsius": (36.9, 0.12, 0.6, 33.0, 41.5),
    "weight_kg": (80.0, 0.0, 18.0, 35.0, 180.0),
    "heart_rate": (78.0, 4.0, 11.0, 35.0, 190.0),
    "spo2": (97.5, -0.7, 1.8, 70.0, 100.0),
    "fluid_output_4h": (220.0, -16.0, 80.0, 0.0, 1200.0),
}

_STATIC_FEATURES = ("elixhauser", "age", "weight_kg")
_FEMALE_RATE = 0.44
_READMISSION_RATE = 0.15


@dataclass(frozen=True)
class SimMDPConfig:
    """Ground-truth MDP parameters for the synthetic cohort generator."""

    n_severity_levels: int
    transition_tensor: np.ndarray  # (S, 25, S), rows sum to 1
    clinician_policy: np.ndarray  # (S, 25), rows sum to 1
    death_hazard: np.ndarray  # (S,), non-decreasing
    discharge_hazard: np.ndarray  # (S,), non-increasing
    initial_severity: np.ndarray  # (S,), sums to 1
    sofa_levels: np.ndarray  # (S,), strictly increasing
    lactate_levels: np.ndarray  # (S,), strictly increasing
    iv_dose_edges: np.ndarray  # (5,), ascending, edge 0 = 0
    vp_dose_edges: np.ndarray
    max_horizon: int = 20
    seed: int = 0
    feature_noise_scale: float = 1.0
    reward: RewardConfig = field(default_factory=RewardConfig)

    def __post_init__(self):
        s = self.n_severity_levels
        t = np.asarray(self.transition_tensor, dtype=np.float64)
        if t.shape != (s, N_ACTIONS, s):
            raise ConfigurationError(f"transition tensor must be ({s}, {N_ACTIONS}, {s})")
        if np.any(t < 0) or not np.allclose(t.sum(axis=2), 1.0, atol=1e-9):
            raise ConfigurationError("transition rows must be distributions summing to 1")
        pol = np.asarray(self.clinician_policy, dtype=np.float64)
        if pol.shape != (s, N_ACTIONS) or np.any(pol < 0) or not np.allclose(
            pol.sum(axis=1), 1.0, atol=1e-9
        ):
            raise ConfigurationError("clinician policy rows must be distributions")
        d = np.asarray(self.death_hazard, dtype=np.float64)
        c = np.asarray(self.discharge_hazard, dtype=np.float64)
        if np.any(d < 0) or np.any(c < 0) or np.any(d + c > 1.0 + 1e-12):
            raise ConfigurationError("hazards must be in [0, 1] with d + c <= 1")
        if np.any(np.diff(d) < -1e-12):
            raise ConfigurationError("death hazard must be non-decreasing in severity")
        if np.any(np.diff(c) > 1e-12):
            raise ConfigurationError("discharge hazard must be non-increasing in severity")
        sofa = np.asarray(self.sofa_levels, dtype=np.float64)
        if np.any(np.diff(sofa) <= 0):
            raise ConfigurationError("SOFA levels must be strictly increasing in severity")
        if self.max_horizon < 1:
            raise ConfigurationError("max_horizon must be >= 1")
        init = np.asarray(self.initial_severity, dtype=np.float64)
        if init.shape != (s,) or np.any(init < 0) or abs(init.sum() - 1.0) > 1e-9:
            raise ConfigurationError("initial severity must be a distribution")


def _mismatch_transitions(
    n_sev: int,
    iv_target: np.ndarray,
    vp_target: np.ndarray,
    improve_base: float,
    improve_slope: float,
    worsen_base: float,
    worsen_slopes: np.ndarray,
) -> np.ndarray:
    """Tridiagonal severity dynamics: matching the per-severity target doses
    maximizes the improvement probability; each unit of dose mismatch trades
    improvement for deterioration. The worsening slope varies by severity so
    action consequences stay resolvable at the boundaries of the chain."""
    tensor = np.zeros((n_sev, N_ACTIONS, n_sev))
    for sev in range(n_sev):
        for a in range(N_ACTIONS):
            iv, vp = a // N_BINS, a % N_BINS
            m = abs(iv - iv_target[sev]) + abs(vp - vp_target[sev])
            p_imp = max(improve_base - improve_slope * m, 0.04)
            p_wor = min(worsen_base + worsen_slopes[sev] * m, 0.85)
            if p_imp + p_wor > 0.98:
                scale = 0.98 / (p_imp + p_wor)
                p_imp, p_wor = p_imp * scale, p_wor * scale
            row = np.zeros(n_sev)
            row[max(sev - 1, 0)] += p_imp
            row[min(sev + 1, n_sev - 1)] += p_wor
            row[sev] += 1.0 - p_imp - p_wor
            tensor[sev, a] = row
    return tensor


def _sparing_policy(n_sev: int, p_zero_iv: np.ndarray, p_zero_vp: np.ndarray) -> np.ndarray:
    """Clinician behavior: the no-drug probability falls with severity and the
    positive bins are used uniformly, so quartile fitting on the emitted doses
    recovers the generator's bin edges."""
    policy = np.zeros((n_sev, N_ACTIONS))
    for sev in range(n_sev):
        p_iv = np.full(N_BINS, (1.0 - p_zero_iv[sev]) / 4.0)
        p_iv[0] = p_zero_iv[sev]
        p_vp = np.full(N_BINS, (1.0 - p_zero_vp[sev]) / 4.0)
        p_vp[0] = p_zero_vp[sev]
        policy[sev] = np.outer(p_iv, p_vp).reshape(-1)
    return policy


OPTIMAL_IV_TARGET = np.array([0, 1, 1, 2, 2, 3, 3, 4])
OPTIMAL_VP_TARGET = np.array([0, 0, 0, 1, 1, 2, 3, 4])


def default_config(
    seed: int = 0,
    max_horizon: int = 20,
    target_mortality: float | None = 0.129,
    feature_noise_scale: float = 1.0,
    reward: RewardConfig | None = None,
) -> SimMDPConfig:
    """Default 8-severity cohort, calibrated to the target death fraction.

    Calibration scales the death hazards so that the exact finite-horizon
    mortality under the clinician policy equals target_mortality.
    """
    n_sev = 8
    reward = reward or RewardConfig()
    tensor = _mismatch_transitions(
        n_sev,
        OPTIMAL_IV_TARGET,
        OPTIMAL_VP_TARGET,
        improve_base=0.48,
        improve_slope=0.10,
        worsen_base=0.12,
        worsen_slopes=np.array([0.12, 0.08, 0.05, 0.045, 0.045, 0.05, 0.06, 0.07]),
    )
    clinician = _sparing_policy(
        n_sev,
        p_zero_iv=np.array([0.50, 0.38, 0.28, 0.20, 0.14, 0.10, 0.06, 0.04]),
        p_zero_vp=np.array([0.93, 0.89, 0.83, 0.77, 0.71, 0.66, 0.30, 0.12]),
    )
    discharge = np.array([0.55, 0.30, 0.12, 0.05, 0.015, 0.005, 0.002, 0.0])
    death_base = np.array([0.0, 0.0, 0.001, 0.004, 0.012, 0.05, 0.15, 0.35])

    def build(death: np.ndarray) -> SimMDPConfig:
        return SimMDPConfig(
            n_severity_levels=n_sev,
            transition_tensor=tensor,
            clinician_policy=clinician,
            death_hazard=death,
            discharge_hazard=discharge,
            initial_severity=np.array([0.02, 0.10, 0.17, 0.22, 0.21, 0.14, 0.09, 0.05]),
            sofa_levels=np.array([1.0, 3.0, 6.0, 9.0, 12.0, 15.0, 18.0, 21.0]),
            lactate_levels=1.0 + 0.30 * np.arange(float(n_sev)),
            iv_dose_edges=np.array([0.0, 250.0, 500.0, 750.0, 1000.0]),
            vp_dose_edges=np.array([0.0, 0.15, 0.30, 0.45, 0.60]),
            max_horizon=max_horizon,
            seed=seed,
            feature_noise_scale=feature_noise_scale,
            reward=reward,
        )

    if target_mortality is None:
        return build(death_base)

    def mortality_at(scale: float) -> float:
        death = np.minimum(death_base * scale, 1.0 - discharge)
        cfg = build(death)
        oracle = solve_oracle(cfg, gamma=0.99)
        return oracle.policy_mortality(clinician)

    lo, hi = 0.05, 40.0
    if not (mortality_at(lo) <= target_mortality <= mortality_at(hi)):
        raise ConfigurationError(
            f"target mortality {target_mortality} outside the calibratable range"
        )
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if mortality_at(mid) < target_mortality:
            lo = mid
        else:
            hi = mid
    return build(np.minimum(death_base * 0.5 * (lo + hi), 1.0 - discharge))


def latent_intermediate_rewards(cfg: SimMDPConfig) -> np.ndarray:
    """(S, S) intermediate rewards between severities, computed through
    mdp_core's reward function so there is a single source of truth."""
    n = cfg.n_severity_levels
    states = []
    for sev in range(n):
        values = np.zeros(N_FEATURES)
        values[SOFA_INDEX] = cfg.sofa_levels[sev]
        values[LACTATE_INDEX] = cfg.lactate_levels[sev]
        states.append(StateVector(values))
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = reward_intermediate(states[i], states[j], cfg.reward)
    return out


class OracleSolution:
    """Exact solutions on the latent chain: optimal Q-table and policy from
    value iteration, plus exact evaluation of arbitrary policies."""

    def __init__(self, cfg: SimMDPConfig, gamma: float, residual_tol: float = 1e-10):
        if gamma > 1.0:
            raise ConfigurationError("gamma must be <= 1")
        if gamma >= 1.0 and not np.all(cfg.death_hazard + cfg.discharge_hazard > 0):
            raise ConfigurationError(
                "gamma >= 1 requires positive termination hazard at every severity"
            )
        self.cfg = cfg
        self.gamma = gamma
        self._r_int = latent_intermediate_rewards(cfg)
        tm = cfg.reward.terminal_magnitude
        d = cfg.death_hazard
        c = cfg.discharge_hazard
        self._cont = 1.0 - d - c
        # expected one-step reward: terminal bonus fires on absorption, the
        # intermediate reward only on continuation
        term = d * (-tm) + c * tm
        t = cfg.transition_tensor
        self.expected_reward = np.einsum("iak,k->ia", t, term) + np.einsum(
            "iak,ik,k->ia", t, self._r_int, self._cont
        )
        self._bootstrap_weight = t * self._cont[None, None, :]  # (S, 25, S)

        q = np.zeros((cfg.n_severity_levels, N_ACTIONS))
        while True:
            v = q.max(axis=1)
            q_new = self.expected_reward + gamma * np.einsum(
                "iak,k->ia", self._bootstrap_weight, v
            )
            residual = np.abs(q_new - q).max()
            q = q_new
            if residual < residual_tol:
                break
        self.q_star = q
        self.v_star = q.max(axis=1)
        self.optimal_policy = q.argmax(axis=1)  # lowest flat index on ties

    def optimal_policy_matrix(self) -> np.ndarray:
        mat = np.zeros((self.cfg.n_severity_levels, N_ACTIONS))
        mat[np.arange(self.cfg.n_severity_levels), self.optimal_policy] = 1.0
        return mat

    def epsilon_greedy_matrix(self, epsilon: float) -> np.ndarray:
        return (1.0 - epsilon) * self.optimal_policy_matrix() + epsilon / N_ACTIONS

    def policy_value(self, policy_matrix: np.ndarray) -> np.ndarray:
        """Infinite-horizon value per severity by direct linear solve."""
        r_pi = np.einsum("ia,ia->i", policy_matrix, self.expected_reward)
        m_pi = np.einsum("ia,iak->ik", policy_matrix, self._bootstrap_weight)
        n = self.cfg.n_severity_levels
        return np.linalg.solve(np.eye(n) - self.gamma * m_pi, r_pi)

    def policy_value_finite(self, policy_matrix: np.ndarray) -> np.ndarray:
        """Exact value of the episodic process including the horizon cap,
        under which a patient still alive at the final row survives."""
        cfg = self.cfg
        tm = cfg.reward.terminal_magnitude
        d, c = cfg.death_hazard, cfg.discharge_hazard
        t = cfg.transition_tensor
        # last allowed row: death ends with -tm, anything else survives
        last = np.einsum("ia,iak,k->i", policy_matrix, t, d * (-tm) + (1.0 - d) * tm)
        v = last
        for _ in range(cfg.max_horizon - 1):
            inner = (
                d * (-tm)
                + c * tm
                + self._cont * (self._r_int + self.gamma * v[None, :])
            )  # (S, S): current severity x next severity
            v = np.einsum("ia,iak,ik->i", policy_matrix, t, inner)
        return v

    def policy_mortality(self, policy_matrix: np.ndarray) -> float:
        """Exact death probability of an episode under the horizon cap."""
        cfg = self.cfg
        d = cfg.death_hazard
        t = cfg.transition_tensor
        die = np.einsum("ia,iak,k->i", policy_matrix, t, d)
        for _ in range(cfg.max_horizon - 1):
            die = np.einsum("ia,iak,k->i", policy_matrix, t, d + self._cont * die)
        return float(cfg.initial_severity @ die)

    def expected_episode_rows(self, policy_matrix: np.ndarray) -> float:
        cfg = self.cfg
        t = cfg.transition_tensor
        rows = np.ones(cfg.n_severity_levels)
        for _ in range(cfg.max_horizon - 1):
            rows = 1.0 + np.einsum(
                "ia,iak,k,k->i", policy_matrix, t, self._cont, rows
            )
        return float(cfg.initial_severity @ rows)

    def initial_value(self, values_per_severity: np.ndarray) -> float:
        return float(self.cfg.initial_severity @ values_per_severity)


def solve_oracle(cfg: SimMDPConfig, gamma: float) -> OracleSolution:
    """Value-iterate the latent MDP to a 1e-10 fixed point."""
    return OracleSolution(cfg, gamma)


def classify_severity(cfg: SimMDPConfig, states: np.ndarray) -> np.ndarray:
    """Nearest-SOFA severity estimate; exact for deterministic SOFA emission."""
    sofa = np.atleast_2d(np.asarray(states, dtype=np.float64))[:, SOFA_INDEX]
    return np.abs(sofa[:, None] - cfg.sofa_levels[None, :]).argmin(axis=1)


@dataclass(frozen=True)
class SynthCohort:
    """Generated cohort plus the latent ground truth needed by the oracles."""

    rows: tuple[RawTimestep, ...]
    severities: np.ndarray  # (n_rows,) latent severity aligned with rows
    outcomes: dict[str, str]  # patient_id -> "survived" | "died"
    config: SimMDPConfig

    @property
    def n_patients(self) -> int:
        return len(self.outcomes)

    def died_fraction(self) -> float:
        died = sum(1 for o in self.outcomes.values() if o == "died")
        return died / max(len(self.outcomes), 1)

    def statistics(self) -> dict:
        genders = [r.features[FEATURE_NAMES.index("gender")] for r in self.rows if r.t == 0]
        ages = [r.features[FEATURE_NAMES.index("age")] for r in self.rows if r.t == 0]
        n_rows = len(self.rows)
        return {
            "n_patients": self.n_patients,
            "n_rows": n_rows,
            "died_fraction": self.died_fraction(),
            "pct_female": 100.0 * float(np.mean(genders)) if genders else 0.0,
            "mean_age": float(np.mean(ages)) if ages else 0.0,
            "mean_episode_rows": n_rows / max(self.n_patients, 1),
            "mean_hours_in_icu": 4.0 * n_rows / max(self.n_patients, 1),
        }


def _emission_tables(cfg: SimMDPConfig):
    base = np.zeros(N_FEATURES)
    slope = np.zeros(N_FEATURES)
    noise = np.zeros(N_FEATURES)
    lo = np.full(N_FEATURES, -np.inf)
    hi = np.full(N_FEATURES, np.inf)
    for name, (b, s, n, clo, chi) in _PROFILE.items():
        i = FEATURE_NAMES.index(name)
        base[i], slope[i], noise[i], lo[i], hi[i] = b, s, n * cfg.feature_noise_scale, clo, chi
    return base, slope, noise, lo, hi


def generate_cohort(cfg: SimMDPConfig, n_patients: int) -> SynthCohort:
    """Simulate episodes under the clinician policy.

    Per-patient RNG streams are derived from (seed, patient index), so output
    is deterministic regardless of how generation might be parallelized.
    """
    if n_patients < 1:
        raise ConfigurationError("n_patients must be >= 1")
    base, slope, noise, lo, hi = _emission_tables(cfg)
    i_gender = FEATURE_NAMES.index("gender")
    i_readm = FEATURE_NAMES.index("readmission")
    i_mech = FEATURE_NAMES.index("mechanical_ventilation")
    i_tfo = FEATURE_NAMES.index("total_fluid_output")
    i_time = FEATURE_NAMES.index("timestep")
    static_idx = [FEATURE_NAMES.index(n) for n in _STATIC_FEATURES]

    clin_cdf = np.cumsum(cfg.clinician_policy, axis=1)
    trans_cdf = np.cumsum(cfg.transition_tensor, axis=2)
    init_cdf = np.cumsum(cfg.initial_severity)
    iv_edges, vp_edges = cfg.iv_dose_edges, cfg.vp_dose_edges
    d, c = cfg.death_hazard, cfg.discharge_hazard

    rows: list[RawTimestep] = []
    severities: list[int] = []
    outcomes: dict[str, str] = {}
    id_width = max(6, len(str(n_patients - 1)))

    for pidx in range(n_patients):
        rng = np.random.default_rng([cfg.seed, pidx])
        pid = f"p{pidx:0{id_width}d}"
        sev = int(np.searchsorted(init_cdf, rng.random(), side="left"))
        statics = base[static_idx] + noise[static_idx] * rng.standard_normal(len(static_idx))
        statics = np.clip(statics, lo[static_idx], hi[static_idx])
        gender = 1.0 if rng.random() < _FEMALE_RATE else 0.0
        readmission = 1.0 if rng.random() < _READMISSION_RATE else 0.0

        patient_rows: list[RawTimestep] = []
        patient_sevs: list[int] = []
        outcome = "survived"
        for t in range(cfg.max_horizon):
            x = base + slope * sev + noise * rng.standard_normal(N_FEATURES)
            x = np.clip(x, lo, hi)
            x[static_idx] = statics
            x[i_gender] = gender
            x[i_readm] = readmission
            x[SOFA_INDEX] = cfg.sofa_levels[sev]
            x[LACTATE_INDEX] = cfg.lactate_levels[sev]
            x[i_mech] = 1.0 if rng.random() < min(0.10 + 0.10 * sev, 0.95) else 0.0
            x[i_tfo] = max(0.0, (t + 1) * (210.0 - 14.0 * sev) + 120.0 * rng.standard_normal())
            x[i_time] = float(t)

            action = int(np.searchsorted(clin_cdf[sev], rng.random(), side="left"))
            iv_bin, vp_bin = action // N_BINS, action % N_BINS
            iv_dose = 0.0 if iv_bin == 0 else rng.uniform(iv_edges[iv_bin - 1], iv_edges[iv_bin])
            vp_dose = 0.0 if vp_bin == 0 else rng.uniform(vp_edges[vp_bin - 1], vp_edges[vp_bin])

            patient_rows.append(
                RawTimestep(
                    patient_id=pid,
                    t=t,
                    features=x,
                    iv_dose_raw=iv_dose,
                    vp_dose_raw=vp_dose,
                    outcome="",
                )
            )
            patient_sevs.append(sev)

            sev_next = int(np.searchsorted(trans_cdf[sev, action], rng.random(), side="left"))
            u = rng.random()
            if u < d[sev_next]:
                outcome = "died"
                break
            if u < d[sev_next] + c[sev_next]:
                outcome = "survived"
                break
            sev = sev_next
        patient_rows[-1] = replace(patient_rows[-1], outcome=outcome)
        rows.extend(patient_rows)
        severities.extend(patient_sevs)
        outcomes[pid] = outcome

    return SynthCohort(
        rows=tuple(rows),
        severities=np.asarray(severities, dtype=np.int64),
        outcomes=outcomes,
        config=cfg,
    )


def sample_emissions(
    cfg: SimMDPConfig, severity: int, n_samples: int, rng: np.random.Generator
) -> np.ndarray:
    """Fresh observation samples for one severity (used to project policies
    that act on observations down onto the latent chain)."""
    base, slope, noise, lo, hi = _emission_tables(cfg)
    i_gender = FEATURE_NAMES.index("gender")
    i_readm = FEATURE_NAMES.index("readmission")
    i_mech = FEATURE_NAMES.index("mechanical_ventilation")
    i_tfo = FEATURE_NAMES.index("total_fluid_output")
    i_time = FEATURE_NAMES.index("timestep")

    x = base + slope * severity + noise * rng.standard_normal((n_samples, N_FEATURES))
    x = np.clip(x, lo, hi)
    x[:, i_gender] = (rng.random(n_samples) < _FEMALE_RATE).astype(float)
    x[:, i_readm] = (rng.random(n_samples) < _READMISSION_RATE).astype(float)
    x[:, SOFA_INDEX] = cfg.sofa_levels[severity]
    x[:, LACTATE_INDEX] = cfg.lactate_levels[severity]
    x[:, i_mech] = (rng.random(n_samples) < min(0.10 + 0.10 * severity, 0.95)).astype(float)
    t = rng.integers(0, cfg.max_horizon, size=n_samples)
    x[:, i_tfo] = np.maximum(
        0.0, (t + 1) * (210.0 - 14.0 * severity) + 120.0 * rng.standard_normal(n_samples)
    )
    x[:, i_time] = t.astype(float)
    return x


def induced_policy_matrix(
    cfg: SimMDPConfig,
    action_fn,
    n_samples: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Project an observation-space policy onto the latent chain by Monte
    Carlo over emissions: row sigma holds the frequency of each action."""
    mat = np.zeros((cfg.n_severity_levels, N_ACTIONS))
    for sev in range(cfg.n_severity_levels):
        states = sample_emissions(cfg, sev, n_samples, rng)
        actions = np.asarray(action_fn(states), dtype=np.int64)
        counts = np.bincount(actions, minlength=N_ACTIONS)
        mat[sev] = counts / counts.sum()
    return mat
