"""Shaped reward terms, gating factor and curriculum staging.

Three dense terms drive the task: r1 pulls the grapple body to the log,
r2 pays for lifting the log and approaching the unloading point, r3 pays
for settling the log onto the target with low vertical speed. The raw r3
definition divides by the vertical log speed, which is singular at rest;
the implementation divides by (|v_z| + epsilon_v) instead, keeping the
"slower is better" shape while staying bounded.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import STAGE_COUNT, CurriculumConfig, RewardConfig


def proximity_score(d):
    """Bounded inverse-distance score 1 / (1 + d^2), in (0, 1]."""
    d = np.asarray(d, dtype=float)
    return 1.0 / (1.0 + d * d)


def gating_factor(attached, config: RewardConfig):
    """Weighting factor b: the full weight, gated on attachment if configured."""
    if config.gating == "constant":
        return np.broadcast_to(np.float64(config.weight_w), np.shape(attached)).copy() \
            if np.ndim(attached) else float(config.weight_w)
    b = np.where(np.asarray(attached), config.weight_w, 0.0)
    return float(b) if np.ndim(attached) == 0 else b


def reward_r1(log_pos, grapple_body_pos):
    d = np.linalg.norm(np.asarray(log_pos) - np.asarray(grapple_body_pos), axis=-1)
    return proximity_score(d)


def reward_r2(log_pos, unload_point, b):
    log_pos = np.asarray(log_pos, dtype=float)
    d = np.linalg.norm(log_pos - np.asarray(unload_point), axis=-1)
    return log_pos[..., 2] + proximity_score(d) * b


def reward_r3(log_pos, log_vz, target_point, b, config: RewardConfig):
    d = np.linalg.norm(np.asarray(log_pos, dtype=float) - np.asarray(target_point), axis=-1)
    x = proximity_score(d)
    return x * x * np.asarray(b, dtype=float) ** 3 / (np.abs(log_vz) + config.epsilon_v)


@dataclass
class RewardTerms:
    r1: np.ndarray
    r2: np.ndarray
    r3: np.ndarray

    def stack(self):
        return np.stack([self.r1, self.r2, self.r3], axis=-1)


# Per arrangement: which terms are summed at each stage (indices into r1..r3).
_STAGE_TERMS = {
    "SEPARATE": ([0], [0, 1], [0, 1, 2]),
    "GRASP_THEN_PLACE": ([0, 1], [0, 1, 2]),
    "REACH_THEN_REST": ([0], [0, 1, 2]),
    "FLAT": ([0, 1, 2],),
}


def stage_reward(terms: RewardTerms, curriculum: CurriculumConfig, stage: int):
    stages = _STAGE_TERMS[curriculum.arrangement]
    if not 0 <= stage < len(stages):
        raise IndexError(
            f"stage {stage} invalid for arrangement {curriculum.arrangement}")
    parts = (terms.r1, terms.r2, terms.r3)
    total = sum(parts[i] for i in stages[stage])
    return total


@dataclass
class StageState:
    current_stage: int = 0
    epochs_in_stage: int = 0
    best_return: float = -np.inf
    best_checkpoint: Optional[object] = None
    transitioned: bool = False  # set for the epoch a stage boundary was crossed


def advance_stage(stage_state: StageState, curriculum: CurriculumConfig,
                  mean_return: float, checkpoint) -> StageState:
    """Account one finished epoch; move to the next stage when its budget ends.

    `checkpoint` is an opaque reference to the model state at the end of the
    epoch. On a stage transition the best checkpoint of the completed stage
    is carried over in `best_checkpoint` so the driver can restore it.
    """
    s = StageState(stage_state.current_stage, stage_state.epochs_in_stage,
                   stage_state.best_return, stage_state.best_checkpoint)
    s.epochs_in_stage += 1
    if mean_return >= s.best_return:
        s.best_return = mean_return
        s.best_checkpoint = checkpoint
    budgets = curriculum.stage_epoch_budgets
    n_stages = STAGE_COUNT[curriculum.arrangement]
    if (s.epochs_in_stage >= int(budgets[s.current_stage])
            and s.current_stage + 1 < n_stages):
        s.current_stage += 1
        s.epochs_in_stage = 0
        s.best_return = -np.inf
        s.transitioned = True
    return s
