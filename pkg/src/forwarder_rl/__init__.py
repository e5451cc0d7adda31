"""Kinematic log-loading environment, PPO trainer and evaluation tools."""

from .config import (
    ARRANGEMENTS,
    CurriculumConfig,
    EnvConfig,
    PpoConfig,
    RewardConfig,
    RunConfig,
    STAGE_COUNT,
    load_chain,
    run_config_from_tree,
    run_config_to_tree,
)
from .configfile import ConfigError
from .env import OBS_DIM, ForwarderEnv, WorldState, reset, step
from .evaluation import (
    EvalReport,
    ScriptedOracle,
    evaluate_checkpoint,
    evaluate_success_rate,
    run_curriculum_sweep,
    run_generalization_suite,
    scripted_oracle_policy,
)
from .model import (
    ACTIVE_IDX,
    ACTIVE_JOINTS,
    KinematicChain,
    LimitViolationError,
    forward_kinematics,
    load_default_model,
    resolve_passive_joints,
)
from .ppo import (
    ACT_DIM,
    GaussianPolicy,
    TrainResult,
    ValueNet,
    compute_gae,
    load_agent,
    ppo_update,
    save_agent,
    train,
)
from .rewards import (
    RewardTerms,
    StageState,
    advance_stage,
    proximity_score,
    stage_reward,
)

__version__ = "0.1.0"

__all__ = [
    "ACT_DIM", "ACTIVE_IDX", "ACTIVE_JOINTS", "ARRANGEMENTS", "ConfigError",
    "CurriculumConfig", "EnvConfig", "EvalReport", "ForwarderEnv",
    "GaussianPolicy", "KinematicChain", "LimitViolationError", "OBS_DIM",
    "PpoConfig", "RewardConfig", "RewardTerms", "RunConfig", "STAGE_COUNT",
    "ScriptedOracle", "StageState", "TrainResult", "ValueNet", "WorldState",
    "advance_stage", "compute_gae", "evaluate_checkpoint",
    "evaluate_success_rate", "forward_kinematics", "load_agent", "load_chain",
    "load_default_model", "ppo_update", "proximity_score", "reset",
    "resolve_passive_joints", "run_config_from_tree", "run_config_to_tree",
    "run_curriculum_sweep", "run_generalization_suite", "save_agent",
    "scripted_oracle_policy", "stage_reward", "step", "train",
]
