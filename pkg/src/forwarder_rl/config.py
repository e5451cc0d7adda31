"""Typed run configuration assembled from the key-value config tree."""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .configfile import ConfigError, merge

ARRANGEMENTS = ("SEPARATE", "GRASP_THEN_PLACE", "REACH_THEN_REST", "FLAT")
STAGE_COUNT = {"SEPARATE": 3, "GRASP_THEN_PLACE": 2, "REACH_THEN_REST": 2, "FLAT": 1}
GATINGS = ("constant", "attach_gated")
TERRAINS = ("flat", "elevated", "rough")


@dataclass
class EnvConfig:
    dt: float = 0.05
    # per active joint, order j1 j2 j3 j4 j7 j8 j9, units/s
    action_scale: list = field(default_factory=lambda: [0.6, 0.4, 0.4, 0.5, 1.2, 1.2, 1.2])
    # per joint j1..j9, units/s (target-tracking rate limit)
    max_joint_speed: list = field(default_factory=lambda: [0.5] * 9)
    episode_length: int = 400
    # per active joint [lo, hi]; passive joints are resolved, not sampled
    joint_init_ranges: list = field(default_factory=lambda: [
        [-0.6, 0.6], [-0.2, 0.5], [-0.3, 0.5], [0.0, 0.8],
        [0.3, 2.8], [-0.5, 0.3], [-0.5, 0.3],
    ])
    # [xmin, xmax, ymin, ymax, yaw_min, yaw_max]
    log_spawn_region: list = field(default_factory=lambda: [-1.9, -0.9, 2.7, 3.3, 0.0, 3.14159])
    log_radius: float = 0.15
    log_length: float = 3.0
    log_mass: float = 150.0
    grasp_capture_radius: float = 0.15
    grasp_close_threshold: float = 0.0  # radians; jaws closed beyond this attach
    success_radius: float = 0.5
    success_speed: float = 0.1
    require_release: bool = False
    terrain_kind: str = "flat"
    terrain_height: float = 0.0       # elevated-plane height
    terrain_amplitude: float = 0.0    # rough-terrain max cell height
    terrain_cell: float = 0.5
    terrain_seed: int = 0
    num_envs: int = 64
    seed: int = 0

    def validate(self, chain=None):
        if self.dt <= 0:
            raise ConfigError("env.dt must be positive")
        if self.episode_length < 1:
            raise ConfigError("env.episode_length must be >= 1")
        if len(self.action_scale) != 7:
            raise ConfigError("env.action_scale must have 7 entries")
        if len(self.max_joint_speed) != 9:
            raise ConfigError("env.max_joint_speed must have 9 entries")
        if len(self.joint_init_ranges) != 7:
            raise ConfigError("env.joint_init_ranges must have 7 [lo, hi] pairs")
        if self.terrain_kind not in TERRAINS:
            raise ConfigError(f"env.terrain_kind must be one of {TERRAINS}")
        if chain is not None:
            from .model import ACTIVE_IDX
            lo = chain.min_limits[ACTIVE_IDX]
            hi = chain.max_limits[ACTIVE_IDX]
            for k, (a, b) in enumerate(self.joint_init_ranges):
                if a > b or a < lo[k] - 1e-9 or b > hi[k] + 1e-9:
                    raise ConfigError(
                        f"env.joint_init_ranges[{k}] outside joint limits")


@dataclass
class RewardConfig:
    weight_w: float = 10.0
    epsilon_v: float = 0.1
    gating: str = "attach_gated"

    def validate(self):
        if self.weight_w <= 0:
            raise ConfigError("reward.weight_w must be positive")
        if self.epsilon_v <= 0:
            raise ConfigError("reward.epsilon_v must be positive")
        if self.gating not in GATINGS:
            raise ConfigError(f"reward.gating must be one of {GATINGS}")


@dataclass
class CurriculumConfig:
    arrangement: str = "GRASP_THEN_PLACE"
    stage_epoch_budgets: list = field(default_factory=lambda: [300, 700])

    def validate(self):
        if self.arrangement not in ARRANGEMENTS:
            raise ConfigError(f"curriculum.arrangement must be one of {ARRANGEMENTS}")
        need = STAGE_COUNT[self.arrangement]
        if len(self.stage_epoch_budgets) != need:
            raise ConfigError(
                f"curriculum.stage_epoch_budgets needs {need} entries for "
                f"{self.arrangement}")
        if any(int(b) <= 0 for b in self.stage_epoch_budgets):
            raise ConfigError("curriculum.stage_epoch_budgets must be positive")


@dataclass
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_ratio: float = 0.2
    learning_rate: float = 1e-3
    rollout_horizon: int = 64
    update_epochs: int = 5
    minibatch_size: int = 1024
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    max_grad_norm: float = 1.0
    hidden_sizes: list = field(default_factory=lambda: [128, 128])

    def validate(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("ppo.gamma must be in [0, 1)")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("ppo.lam must be in [0, 1]")
        if self.clip_ratio <= 0:
            raise ConfigError("ppo.clip_ratio must be positive")


@dataclass
class RunConfig:
    env: EnvConfig
    reward: RewardConfig
    curriculum: CurriculumConfig
    ppo: PpoConfig
    model: dict  # geometry overrides or a full serialized chain

    def validate(self, chain=None):
        self.env.validate(chain)
        self.reward.validate()
        self.curriculum.validate()
        self.ppo.validate()


_SECTIONS = {"env": EnvConfig, "reward": RewardConfig,
             "curriculum": CurriculumConfig, "ppo": PpoConfig}


def _build(cls, section: str, values: dict):
    obj = cls()
    known = set(obj.__dataclass_fields__)
    for k, v in values.items():
        if k not in known:
            raise ConfigError(f"unknown config field {section}.{k}")
        setattr(obj, k, v)
    return obj


def run_config_from_tree(tree: dict) -> RunConfig:
    for key in tree:
        if key not in (*_SECTIONS, "model"):
            raise ConfigError(f"unknown config section {key!r}")
    cfg = RunConfig(
        env=_build(EnvConfig, "env", tree.get("env", {})),
        reward=_build(RewardConfig, "reward", tree.get("reward", {})),
        curriculum=_build(CurriculumConfig, "curriculum", tree.get("curriculum", {})),
        ppo=_build(PpoConfig, "ppo", tree.get("ppo", {})),
        model=tree.get("model", {}),
    )
    return cfg


def run_config_to_tree(cfg: RunConfig) -> dict:
    return {
        "env": asdict(cfg.env),
        "reward": asdict(cfg.reward),
        "curriculum": asdict(cfg.curriculum),
        "ppo": asdict(cfg.ppo),
        "model": cfg.model,
    }


def load_chain(cfg: RunConfig):
    from .model import chain_from_config, load_default_model
    if cfg.model and "bodies" in cfg.model:
        return chain_from_config(cfg.model)
    return load_default_model(cfg.model.get("geometry_overrides") if cfg.model else None)
