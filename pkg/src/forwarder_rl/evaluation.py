"""Evaluation harness: success rates, scripted oracle, sweep, generalization.

The scripted oracle is a waypoint finite-state controller that certifies the
environment is solvable independently of any learning. Phases only ever move
forward: align over the log, descend, close, lift, slew to the bed, lower,
release.
"""
from __future__ import annotations

import copy
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from .config import EnvConfig, RewardConfig, RunConfig, STAGE_COUNT, load_chain
from .env import ForwarderEnv
from .model import ACTIVE_IDX, KinematicChain, forward_kinematics, resolve_passive_joints
from .transforms import quat_rotate, wrap_angle

WORKERS_ENV_VAR = "FORWARDER_RL_MAX_WORKERS"

FAILURE_KINDS = ("never_grasped", "pushed_out_of_reach", "dropped",
                 "timeout_holding")


@dataclass
class EvalReport:
    trials: int
    successes: int
    success_rate: float
    mean_return: float
    failures: dict
    base_seed: int
    # paper-scale reference points, metadata only, never pass/fail targets
    reference: dict = field(default_factory=lambda: {
        "paper_success_rate": 966 / 1024,
        "note": "reference from the original large-scale study; "
                "not a desk-scale target",
    })

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Scripted oracle (vectorized FSM)
# ---------------------------------------------------------------------------

PH_ALIGN, PH_DESCEND, PH_CLOSE, PH_LIFT, PH_SLEW, PH_LOWER, PH_RELEASE, PH_HOLD = range(8)


class ScriptedOracle:
    """Finite-state waypoint controller over a batch of environments."""

    def __init__(self, chain: KinematicChain, config: EnvConfig, n: int):
        self.chain = chain
        self.config = config
        self.n = n
        self.phase = np.zeros(n, dtype=int)
        self.hold_q = np.zeros((n, 3))
        # planar-arm geometry derived from the chain
        self.pivot = np.array(chain.offsets[1][:2])
        self.pivot_z = chain.offsets[1][2] + chain.offsets[2][2]
        self.l2 = abs(chain.offsets[3][0])
        self.l3 = abs(chain.offsets[4][0])
        self.s_max = chain.max_limits[3]
        self.hang_drop = -(chain.offsets[6][2] + chain.offsets[7][2])
        self.open_angle = chain.min_limits[7] + 0.02
        self.closed_angle = chain.max_limits[7]

    def _arm_ik(self, r_des, z_gb_des):
        """Elbow-up planar IK: (q2, q3, q4) placing the grapple body at the
        given radial distance from the slew axis and world height.

        The reachable set in this plane is an annulus around the crane pivot;
        goals inside the hole or beyond the rim are clamped to the boundary.
        """
        h = z_gb_des + self.hang_drop - self.pivot_z
        d = np.hypot(r_des, h)
        lo, hi = self.chain.min_limits, self.chain.max_limits
        cos_b_lim = np.cos(min(abs(lo[2]), hi[2]))
        d_lo = np.sqrt(self.l2 ** 2 + self.l3 ** 2
                       + 2.0 * self.l2 * self.l3 * cos_b_lim)
        d = np.clip(d, d_lo + 1e-6, self.l2 + self.l3 + self.s_max - 1e-6)
        L = np.clip(d - self.l2, self.l3, self.l3 + self.s_max)
        cos_b = (d * d - self.l2 ** 2 - L * L) / (2.0 * self.l2 * L)
        beta = np.arccos(np.clip(cos_b, -1.0, 1.0))
        psi = np.arctan2(L * np.sin(beta), self.l2 + L * np.cos(beta))
        alpha = np.arctan2(h, r_des) - psi
        return np.stack([np.clip(alpha, lo[1], hi[1]),
                         np.clip(beta, lo[2], hi[2]),
                         np.clip(L - self.l3, lo[3], hi[3])], axis=-1)

    def _servo(self, err, scale):
        return np.clip(err / (scale * self.config.dt), -1.0, 1.0)

    def __call__(self, state) -> np.ndarray:
        cfg = self.config
        chain = self.chain
        c = np.asarray(cfg.action_scale, dtype=float)
        q = state.q
        gb = state.poses.p_gb
        log = state.log_pos
        phase = self.phase
        n = self.n

        p_unl = np.array(chain.bed.unload_point)
        p_tgt = np.array(chain.bed.target_point)

        # task-space quantities; the placement goal sits slightly outward of
        # the unload column so it stays clear of the arm's inner reach hole
        r_gb = np.linalg.norm(gb[:, :2] - self.pivot, axis=1)
        before = phase < PH_LIFT
        goal_xy = np.where(before[:, None], log[:, :2], p_unl[:2])
        r_goal = np.linalg.norm(goal_xy - self.pivot, axis=1)
        r_goal = np.where(before, r_goal, r_goal + 0.25)
        bearing = np.arctan2(goal_xy[:, 1] - self.pivot[1],
                             goal_xy[:, 0] - self.pivot[0])
        q1_des = np.clip(wrap_angle(bearing - np.pi),
                         chain.min_limits[0], chain.max_limits[0])
        e1 = q1_des - q[:, 0]

        # grapple yaw vs log yaw (mod pi)
        x_gb = quat_rotate(state.poses.H_gb, np.array([1.0, 0.0, 0.0]))
        psi = np.arctan2(x_gb[:, 1], x_gb[:, 0])
        x_log = quat_rotate(state.log_quat, np.array([1.0, 0.0, 0.0]))
        phi = np.arctan2(x_log[:, 1], x_log[:, 0])
        e_yaw = wrap_angle(phi - psi)
        e_yaw = np.where(e_yaw > np.pi / 2, e_yaw - np.pi, e_yaw)
        e_yaw = np.where(e_yaw < -np.pi / 2, e_yaw + np.pi, e_yaw)
        q7_des = q[:, 6] + e_yaw
        q7_des = np.where(q7_des > chain.max_limits[6], q7_des - np.pi, q7_des)
        q7_des = np.where(q7_des < chain.min_limits[6], q7_des + np.pi, q7_des)
        e7 = np.where(before, q7_des - q[:, 6], 0.0)

        # per-phase grapple-body height goals
        att_dz = np.where(state.attached, state.attach_pos[:, 2], -0.70)
        z_des = np.select(
            [phase == PH_ALIGN, phase == PH_DESCEND, phase == PH_CLOSE,
             phase == PH_LIFT, phase == PH_SLEW, phase >= PH_LOWER],
            [log[:, 2] + 1.0,
             log[:, 2] + 0.70,
             gb[:, 2],
             chain.bed.guard_top_z + 0.35 - att_dz,
             chain.bed.guard_top_z + 0.35 - att_dz,
             p_tgt[2] + 0.28 - att_dz],
        )
        # gentle descent while placing, so the log settles slowly
        lowering = phase >= PH_LOWER
        z_cmd = np.where(lowering,
                         np.maximum(z_des, gb[:, 2] - 0.015), z_des)
        q_arm_des = self._arm_ik(r_goal, z_cmd)
        hold = (phase == PH_CLOSE)[:, None]
        q_arm_des = np.where(hold, self.hold_q, q_arm_des)
        dq_arm = q_arm_des - q[:, 1:4]

        # jaw targets: open before the grasp, closed after, open on release
        jaw_open = (phase <= PH_DESCEND) | (phase >= PH_RELEASE)
        jaw_des = np.where(jaw_open, self.open_angle, self.closed_angle)
        e8 = jaw_des - q[:, 7]
        e9 = jaw_des - q[:, 8]

        action = np.zeros((n, 7))
        action[:, 0] = self._servo(e1, c[0])
        action[:, 1] = self._servo(dq_arm[:, 0], c[1])
        action[:, 2] = self._servo(dq_arm[:, 1], c[2])
        action[:, 3] = self._servo(dq_arm[:, 2], c[3])
        action[:, 4] = self._servo(e7, c[4])
        action[:, 5] = self._servo(e8, c[5])
        action[:, 6] = self._servo(e9, c[6])

        # ------- transitions (forward only) -------
        aligned = (np.abs(e1) < 0.03) & (np.abs(r_goal - r_gb) < 0.08) & \
                  (np.abs(e_yaw) < 0.08) & (q[:, 7] < self.open_angle + 0.1) & \
                  (q[:, 8] < self.open_angle + 0.1) & \
                  (np.abs(gb[:, 2] - (log[:, 2] + 1.0)) < 0.12)
        over_log = (np.abs(e1) < 0.015) & \
                   (np.linalg.norm(gb[:, :2] - log[:, :2], axis=1) < 0.05) & \
                   (np.abs(gb[:, 2] - (log[:, 2] + 0.70)) < 0.03) & \
                   (np.abs(e_yaw) < 0.05)
        lifted = state.attached & (log[:, 2] >= chain.bed.guard_top_z + 0.2)
        over_bed = state.attached & (np.abs(e1) < 0.02) & \
                   (np.abs(r_goal - r_gb) < 0.08)
        placed = state.attached & \
                 (np.linalg.norm(log - p_tgt, axis=1) < 0.45) & \
                 (np.abs(state.log_vel[:, 2]) < 0.05)
        released = ~state.attached

        new_phase = phase.copy()
        new_phase[(phase == PH_ALIGN) & aligned] = PH_DESCEND
        closing = (phase == PH_DESCEND) & over_log
        self.hold_q[closing] = q[closing, 1:4]
        new_phase[closing] = PH_CLOSE
        new_phase[(phase == PH_CLOSE) & state.attached] = PH_LIFT
        new_phase[(phase == PH_LIFT) & lifted] = PH_SLEW
        new_phase[(phase == PH_SLEW) & over_bed] = PH_LOWER
        new_phase[(phase == PH_LOWER) & placed] = PH_RELEASE
        new_phase[(phase == PH_RELEASE) & released] = PH_HOLD
        assert np.all(new_phase >= phase)
        self.phase = new_phase
        return action


def scripted_oracle_policy(chain: KinematicChain, config: EnvConfig, n: int):
    """Factory mirroring the policy-callable interface used for evaluation."""
    return ScriptedOracle(chain, config, n)


# ---------------------------------------------------------------------------
# Policy adapters
# ---------------------------------------------------------------------------

class BoundMeanPolicy:
    """Deterministic (mean-action) adapter around a trained agent."""


    def __init__(self, policy, normalizer, env: ForwarderEnv):
        self.policy = policy
        self.normalizer = normalizer
        self.normalizer.frozen = True
        self.env = env

    def __call__(self, state) -> np.ndarray:
        obs = self.normalizer.normalize(self.env.observe())
        mean, _ = self.policy.forward(obs)
        return np.clip(mean, -1.0, 1.0)


# ---------------------------------------------------------------------------
# Success-rate evaluation with failure taxonomy
# ---------------------------------------------------------------------------

def _reach_radius_bounds(chain: KinematicChain, samples: int = 512):
    rng = np.random.default_rng(0)
    q = np.zeros((samples, 9))
    lo = chain.min_limits[ACTIVE_IDX]
    hi = chain.max_limits[ACTIVE_IDX]
    q[:, ACTIVE_IDX] = rng.uniform(lo, hi, size=(samples, 7))
    q = resolve_passive_joints(chain, q)
    poses = forward_kinematics(chain, q, check=False)
    pivot = poses.positions[0, 1, :2]
    radius = np.linalg.norm(poses.p_gb[:, :2] - pivot, axis=1)
    return pivot, float(radius.min()), float(radius.max())


def evaluate_success_rate(make_policy, chain: KinematicChain,
                          config: EnvConfig, reward_config: RewardConfig,
                          n_trials: int, base_seed: int = 10_000) -> EvalReport:
    """Run n_trials fresh episodes; classify failures from the trajectories.

    `make_policy(env)` must return a callable mapping WorldState -> actions
    for env.config.num_envs environments. Trial i uses seed base_seed + i.
    """
    cfg = copy.deepcopy(config)
    cfg.num_envs = n_trials
    env = ForwarderEnv(chain, cfg, reward_config, check_reach=False)
    env.rngs = [np.random.default_rng(base_seed + i) for i in range(n_trials)]
    env.state = env._reset_all()
    policy = make_policy(env)

    pivot, _, reach_max = _reach_radius_bounds(chain)

    ever_attached = np.zeros(n_trials, dtype=bool)
    succeeded = np.zeros(n_trials, dtype=bool)
    finished = np.zeros(n_trials, dtype=bool)
    final_attached = np.zeros(n_trials, dtype=bool)
    final_log = np.zeros((n_trials, 3))
    ep_return = np.zeros(n_trials)

    for _ in range(cfg.episode_length):
        action = policy(env.state)
        res = env.step(action, auto_reset=False)
        ever_attached |= res.info["attached"]
        terms = res.reward_terms
        full = terms.r1 + terms.r2 + terms.r3
        ep_return += np.where(finished, 0.0, full)
        newly = res.done & ~finished
        succeeded[newly] = res.success[newly]
        final_attached[newly] = env.state.attached[newly]
        final_log[newly] = env.state.log_pos[newly]
        finished |= res.done
        if np.all(finished):
            break
    # episodes that hit the step budget exactly at the loop end
    final_attached[~finished] = env.state.attached[~finished]
    final_log[~finished] = env.state.log_pos[~finished]

    failures = {k: 0 for k in FAILURE_KINDS}
    for i in range(n_trials):
        if succeeded[i]:
            continue
        if not ever_attached[i]:
            out = np.linalg.norm(final_log[i, :2] - pivot) > reach_max
            failures["pushed_out_of_reach" if out else "never_grasped"] += 1
        elif final_attached[i]:
            failures["timeout_holding"] += 1
        else:
            failures["dropped"] += 1

    n_succ = int(succeeded.sum())
    return EvalReport(
        trials=n_trials,
        successes=n_succ,
        success_rate=n_succ / n_trials,
        mean_return=float(ep_return.mean()),
        failures=failures,
        base_seed=base_seed,
    )


def evaluate_checkpoint(ckpt_path, chain, config, reward_config, n_trials,
                        base_seed: int = 10_000) -> EvalReport:
    from .ppo import load_agent
    policy, _, normalizer, _ = load_agent(ckpt_path)
    if policy.obs_dim != 53:
        raise ValueError("checkpoint/config observation shape mismatch")
    return evaluate_success_rate(
        lambda env: BoundMeanPolicy(policy, normalizer, env),
        chain, config, reward_config, n_trials, base_seed)


# ---------------------------------------------------------------------------
# Curriculum sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepCell:
    arrangement: str
    weight: float
    seed: int
    final_return: float
    success_rate: float
    failed: bool = False
    error: str = ""


@dataclass
class SweepResult:
    cells: list
    arrangements: list
    weights: list
    seeds: list
    total_epochs: int

    def aggregated(self):
        """(arrangement, w) -> mean final return / success over seeds."""
        out = {}
        for a in self.arrangements:
            for w in self.weights:
                vals = [c for c in self.cells
                        if c.arrangement == a and c.weight == w and not c.failed]
                if vals:
                    out[(a, w)] = {
                        "final_return": float(np.mean([c.final_return for c in vals])),
                        "success_rate": float(np.mean([c.success_rate for c in vals])),
                    }
                else:
                    out[(a, w)] = None
        return out

    def to_json(self):
        return json.dumps({
            "arrangements": self.arrangements,
            "weights": self.weights,
            "seeds": self.seeds,
            "total_epochs": self.total_epochs,
            "cells": [asdict(c) for c in self.cells],
        }, indent=2, sort_keys=True)

    def heatmap_csv(self) -> str:
        """Rows = arrangement, columns = w; cells = mean final return."""
        agg = self.aggregated()
        lines = ["arrangement," + ",".join(f"w={w:g}" for w in self.weights)]
        for a in self.arrangements:
            vals = []
            for w in self.weights:
                cell = agg[(a, w)]
                vals.append("" if cell is None else repr(cell["final_return"]))
            lines.append(a + "," + ",".join(vals))
        return "\n".join(lines) + "\n"


def _split_budget(arrangement: str, total: int):
    n = STAGE_COUNT[arrangement]
    base = total // n
    budgets = [base] * n
    budgets[-1] += total - base * n
    return budgets


def _sweep_cell(args):
    base_tree, arrangement, weight, seed, total_epochs, eval_trials = args
    from .config import run_config_from_tree
    from .ppo import train

    cfg = run_config_from_tree(copy.deepcopy(base_tree))
    cfg.curriculum.arrangement = arrangement
    cfg.curriculum.stage_epoch_budgets = _split_budget(arrangement, total_epochs)
    cfg.reward.weight_w = weight
    cfg.env.seed = seed
    chain = load_chain(cfg)
    import tempfile
    with tempfile.TemporaryDirectory() as tmp:
        result = train(cfg, out_dir=tmp, chain=chain, check_reach=False)
        if result.failed:
            return SweepCell(arrangement, weight, seed, float("nan"),
                             0.0, failed=True, error=result.failure)
        tail = result.metrics[-min(5, len(result.metrics)):]
        final_return = float(np.mean([r["mean_return"] for r in tail]))
        report = evaluate_checkpoint(os.path.join(tmp, "final.ckpt"), chain,
                                     cfg.env, cfg.reward, eval_trials,
                                     base_seed=99_000 + seed)
    return SweepCell(arrangement, weight, seed, final_return,
                     report.success_rate)


def run_curriculum_sweep(base_cfg: RunConfig, arrangements, weights, seeds,
                         total_epochs: int, eval_trials: int = 32) -> SweepResult:
    """Train one agent per (arrangement, w, seed) cell on equal epoch budgets."""
    from .config import run_config_to_tree
    tree = run_config_to_tree(base_cfg)
    jobs = [(tree, a, float(w), int(s), int(total_epochs), eval_trials)
            for a in arrangements for w in weights for s in seeds]
    max_workers = int(os.environ.get(WORKERS_ENV_VAR, "1"))
    if max_workers > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            cells = list(pool.map(_sweep_cell, jobs))
    else:
        cells = [_sweep_cell(j) for j in jobs]
    return SweepResult(cells, list(arrangements), [float(w) for w in weights],
                       [int(s) for s in seeds], int(total_epochs))


# ---------------------------------------------------------------------------
# Generalization suite
# ---------------------------------------------------------------------------

@dataclass
class GeneralizationCase:
    kind: str          # log_scale | elevated_plane | rough_terrain
    parameter: float
    report: EvalReport

    # paper-scale reference results, metadata only
    REFERENCES = {
        ("log_scale", -0.50): 0.18,
        ("log_scale", -0.25): 0.30,
        ("log_scale", -0.10): 0.80,
        ("log_scale", +0.25): 0.78,
        ("log_scale", +0.50): 0.51,
        ("rough_terrain", 0.2): 0.76,
    }


LOG_SCALES = (-0.50, -0.25, -0.10, 0.10, 0.25, 0.50)
ELEVATIONS = (0.2, 0.4, 0.6, 0.8, 1.0)
ROUGH_AMPLITUDE = 0.2


def run_generalization_suite(make_policy, chain: KinematicChain,
                             base_config: EnvConfig,
                             reward_config: RewardConfig,
                             n_trials: int = 64,
                             base_seed: int = 10_000,
                             log_scales=LOG_SCALES,
                             elevations=ELEVATIONS,
                             rough_amplitude=ROUGH_AMPLITUDE) -> list:
    """Evaluate without retraining on perturbed environments."""
    cases = []
    for s in log_scales:
        cfg = copy.deepcopy(base_config)
        cfg.log_radius = base_config.log_radius * (1.0 + s)
        rep = evaluate_success_rate(make_policy, chain, cfg, reward_config,
                                    n_trials, base_seed)
        cases.append(GeneralizationCase("log_scale", float(s), rep))
    for h in elevations:
        cfg = copy.deepcopy(base_config)
        cfg.terrain_kind = "elevated"
        cfg.terrain_height = float(h)
        rep = evaluate_success_rate(make_policy, chain, cfg, reward_config,
                                    n_trials, base_seed)
        cases.append(GeneralizationCase("elevated_plane", float(h), rep))
    cfg = copy.deepcopy(base_config)
    cfg.terrain_kind = "rough"
    cfg.terrain_amplitude = float(rough_amplitude)
    rep = evaluate_success_rate(make_policy, chain, cfg, reward_config,
                                n_trials, base_seed)
    cases.append(GeneralizationCase("rough_terrain", float(rough_amplitude), rep))
    return cases
