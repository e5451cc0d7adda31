"""From-scratch PPO: Gaussian policy, GAE, clipped surrogate, training loop.

Networks and gradients are hand-rolled numpy (see nets.py); the update is
the standard clipped-surrogate objective with per-update advantage
normalization, minibatched Adam steps and global grad-norm clipping.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .config import PpoConfig, RunConfig, load_chain
from .env import OBS_DIM, ForwarderEnv
from .nets import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    MLP,
    Adam,
    RunningNorm,
    clip_grads_,
    load_checkpoint,
    save_checkpoint,
)
from .rewards import RewardTerms, StageState, advance_stage, stage_reward

ACT_DIM = 7

METRICS_COLUMNS = ["epoch", "stage", "mean_return", "success_rate",
                   "r1_mean", "r2_mean", "r3_mean",
                   "policy_loss", "value_loss", "entropy"]

_LOG_2PI = math.log(2.0 * math.pi)


class GaussianPolicy:
    """Tanh-squashed mean head plus state-independent per-dim log-std."""

    def __init__(self, obs_dim, hidden_sizes, act_dim, rng):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.mlp = MLP([obs_dim, *hidden_sizes, act_dim], rng)
        self.log_std = np.full(act_dim, -0.5)

    def forward(self, obs):
        """(mean, std) for obs of shape (..., obs_dim); rejects non-finite."""
        obs = np.asarray(obs, dtype=float)
        if not np.all(np.isfinite(obs)):
            raise ValueError("non-finite observation")
        z, _ = self.mlp.forward(obs)
        mean = np.tanh(z)
        std = np.exp(np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX))
        return mean, np.broadcast_to(std, mean.shape)

    def params(self):
        return self.mlp.params() + [self.log_std]

    def set_params(self, params):
        self.mlp.set_params(params[:-1])
        self.log_std = np.array(params[-1], dtype=float)


class ValueNet:
    def __init__(self, obs_dim, hidden_sizes, rng):
        self.mlp = MLP([obs_dim, *hidden_sizes, 1], rng)

    def forward(self, obs):
        v, _ = self.mlp.forward(np.asarray(obs, dtype=float))
        return v[..., 0]

    def params(self):
        return self.mlp.params()

    def set_params(self, params):
        self.mlp.set_params(params)


def gaussian_log_prob(x, mean, std):
    """Diagonal Gaussian log density, summed over the last axis."""
    z = (x - mean) / std
    return (-0.5 * np.sum(z * z, axis=-1)
            - np.sum(np.log(std), axis=-1)
            - 0.5 * x.shape[-1] * _LOG_2PI)


def sample_action(mean, std, rng):
    """Returns (clamped action, pre-clamp sample, log_prob at the sample)."""
    x = mean + std * rng.standard_normal(mean.shape)
    logp = gaussian_log_prob(x, mean, std)
    return np.clip(x, -1.0, 1.0), x, logp


def compute_gae(rewards, values, dones, bootstrap, gamma, lam):
    """GAE over arrays of shape (N, T); bootstrap has shape (N,).

    delta_t = r_t + gamma*V_{t+1}*(1-done_t) - V_t
    A_t     = delta_t + gamma*lam*(1-done_t)*A_{t+1}
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    live = 1.0 - np.asarray(dones, dtype=float)
    n, t_max = rewards.shape
    adv = np.zeros_like(rewards)
    next_v = np.asarray(bootstrap, dtype=float)
    next_a = np.zeros(n)
    for t in range(t_max - 1, -1, -1):
        delta = rewards[:, t] + gamma * next_v * live[:, t] - values[:, t]
        next_a = delta + gamma * lam * live[:, t] * next_a
        adv[:, t] = next_a
        next_v = values[:, t]
    return adv, adv + values


@dataclass
class RolloutBuffer:
    obs: np.ndarray        # (N, T, obs_dim), normalized
    actions: np.ndarray    # (N, T, act_dim), pre-clamp samples
    log_probs: np.ndarray  # (N, T)
    rewards: np.ndarray    # (N, T) stage rewards
    values: np.ndarray     # (N, T)
    dones: np.ndarray      # (N, T)
    bootstrap: np.ndarray  # (N,)


def _policy_minibatch(policy: GaussianPolicy, obs, actions, logp_old, adv,
                      clip_ratio, entropy_coef):
    """Clipped-surrogate loss and analytic gradients for one minibatch."""
    z, acts = policy.mlp.forward(obs)
    mean = np.tanh(z)
    log_std_c = np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX)
    std = np.exp(log_std_c)
    diff = actions - mean
    inv_var = 1.0 / (std * std)
    logp = (-0.5 * np.sum(diff * diff * inv_var, axis=-1)
            - np.sum(log_std_c) - 0.5 * policy.act_dim * _LOG_2PI)
    ratio = np.exp(logp - logp_old)
    s1 = ratio * adv
    s2 = np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio) * adv
    entropy = float(np.sum(log_std_c) + 0.5 * policy.act_dim * (1.0 + _LOG_2PI))
    loss = float(-np.mean(np.minimum(s1, s2)) - entropy_coef * entropy)

    n = obs.shape[0]
    use = (s1 <= s2).astype(float)  # gradient flows through the min branch
    dlogp = -(adv * ratio * use) / n
    dmean = dlogp[:, None] * (diff * inv_var)
    dz = dmean * (1.0 - mean * mean)
    g_w, g_b, _ = policy.mlp.backward(acts, dz)
    d_log_std = np.sum(dlogp[:, None] * (diff * diff * inv_var - 1.0), axis=0)
    d_log_std -= entropy_coef
    # clamp projection: no gradient where log_std sits outside the clamp
    inside = (policy.log_std > LOG_STD_MIN) & (policy.log_std < LOG_STD_MAX)
    d_log_std = d_log_std * inside
    grads = g_w + g_b + [d_log_std]
    clip_frac = float(np.mean(np.abs(ratio - 1.0) > clip_ratio))
    return loss, grads, entropy, clip_frac


def _value_minibatch(value: ValueNet, obs, returns, value_coef):
    v, acts = value.mlp.forward(obs)
    v = v[..., 0]
    err = v - returns
    loss = float(value_coef * 0.5 * np.mean(err * err))
    dv = (value_coef * err / obs.shape[0])[:, None]
    g_w, g_b, _ = value.mlp.backward(acts, dv)
    return loss, g_w + g_b


def ppo_update(policy: GaussianPolicy, value: ValueNet,
               policy_opt: Adam, value_opt: Adam,
               buffer: RolloutBuffer, config: PpoConfig,
               rng: np.random.Generator) -> dict:
    """Run update_epochs x minibatches of clipped-surrogate + value updates.

    Advantages are normalized once per update (mean 0, std 1). A non-finite
    loss aborts the update and reports diagnostics instead of stepping.
    """
    obs = buffer.obs.reshape(-1, buffer.obs.shape[-1])
    actions = buffer.actions.reshape(-1, buffer.actions.shape[-1])
    logp_old = buffer.log_probs.reshape(-1)
    adv, returns = compute_gae(buffer.rewards, buffer.values, buffer.dones,
                               buffer.bootstrap, config.gamma, config.lam)
    adv = adv.reshape(-1)
    returns = returns.reshape(-1)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    batch = obs.shape[0]
    mb = min(int(config.minibatch_size), batch)
    p_losses, v_losses, entropies, clip_fracs = [], [], [], []
    for _ in range(int(config.update_epochs)):
        order = rng.permutation(batch)
        for start in range(0, batch, mb):
            idx = order[start:start + mb]
            p_loss, p_grads, ent, cf = _policy_minibatch(
                policy, obs[idx], actions[idx], logp_old[idx], adv[idx],
                config.clip_ratio, config.entropy_coef)
            v_loss, v_grads = _value_minibatch(
                value, obs[idx], returns[idx], config.value_coef)
            if not (np.isfinite(p_loss) and np.isfinite(v_loss)):
                return {"aborted": True, "policy_loss": p_loss,
                        "value_loss": v_loss, "entropy": ent,
                        "clip_frac": cf}
            clip_grads_(p_grads, config.max_grad_norm)
            clip_grads_(v_grads, config.max_grad_norm)
            policy_opt.step(policy.params(), p_grads)
            value_opt.step(value.params(), v_grads)
            p_losses.append(p_loss)
            v_losses.append(v_loss)
            entropies.append(ent)
            clip_fracs.append(cf)
    return {"aborted": False,
            "policy_loss": float(np.mean(p_losses)),
            "value_loss": float(np.mean(v_losses)),
            "entropy": float(np.mean(entropies)),
            "clip_frac": float(np.mean(clip_fracs))}


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def snapshot(policy, value):
    return ([p.copy() for p in policy.params()],
            [p.copy() for p in value.params()])


def restore(policy, value, snap):
    policy.set_params([p.copy() for p in snap[0]])
    value.set_params([p.copy() for p in snap[1]])


def save_agent(path, policy: GaussianPolicy, value: ValueNet,
               normalizer: RunningNorm, meta=None):
    arrays = policy.params() + value.params()
    header = dict(meta or {})
    header.update({
        "obs_dim": policy.obs_dim,
        "act_dim": policy.act_dim,
        "policy_sizes": policy.mlp.sizes,
        "value_sizes": value.mlp.sizes,
        "n_policy_arrays": len(policy.params()),
        "normalizer": normalizer.state(),
    })
    save_checkpoint(path, arrays, header)


def load_agent(path):
    """Returns (policy, value, normalizer, header)."""
    arrays, header = load_checkpoint(path)
    rng = np.random.default_rng(0)
    policy = GaussianPolicy(header["obs_dim"], header["policy_sizes"][1:-1],
                            header["act_dim"], rng)
    value = ValueNet(header["obs_dim"], header["value_sizes"][1:-1], rng)
    n_p = header["n_policy_arrays"]
    policy.set_params(arrays[:n_p])
    value.set_params(arrays[n_p:])
    normalizer = RunningNorm.from_state(header["normalizer"])
    return policy, value, normalizer, header


# ---------------------------------------------------------------------------
# Training driver
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    metrics: list = field(default_factory=list)  # list of row dicts
    failed: bool = False
    failure: str = ""
    final_stage: int = 0


class TrainingHaltedError(RuntimeError):
    pass


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow([repr(row[c]) if isinstance(row[c], float)
                             else row[c] for c in METRICS_COLUMNS])


def train(cfg: RunConfig, out_dir=None, chain=None, log_fn=None,
          check_reach: bool = True) -> TrainResult:
    """Full curriculum training run; writes metrics/checkpoints to out_dir."""
    import os

    chain = chain if chain is not None else load_chain(cfg)
    cfg.validate(chain)
    env = ForwarderEnv(chain, cfg.env, cfg.reward, check_reach=check_reach)

    root = np.random.SeedSequence(cfg.env.seed)
    init_rng, act_rng, upd_rng = (np.random.default_rng(s)
                                  for s in root.spawn(3))
    policy = GaussianPolicy(OBS_DIM, cfg.ppo.hidden_sizes, ACT_DIM, init_rng)
    value = ValueNet(OBS_DIM, cfg.ppo.hidden_sizes, init_rng)
    normalizer = RunningNorm(OBS_DIM)
    p_opt = Adam([p.shape for p in policy.params()], lr=cfg.ppo.learning_rate)
    v_opt = Adam([p.shape for p in value.params()], lr=cfg.ppo.learning_rate)

    n = cfg.env.num_envs
    t_len = int(cfg.ppo.rollout_horizon)
    stage_state = StageState()
    total_epochs = sum(int(b) for b in cfg.curriculum.stage_epoch_budgets)

    result = TrainResult()
    ep_return = np.zeros(n)
    best_snap = snapshot(policy, value)
    last_mean_return = 0.0

    for epoch in range(1, total_epochs + 1):
        stage = stage_state.current_stage
        obs_buf = np.empty((n, t_len, OBS_DIM))
        act_buf = np.empty((n, t_len, ACT_DIM))
        logp_buf = np.empty((n, t_len))
        rew_buf = np.empty((n, t_len))
        val_buf = np.empty((n, t_len))
        done_buf = np.zeros((n, t_len))
        term_sums = np.zeros(3)
        completed_returns = []
        completed_success = []

        for t in range(t_len):
            raw = env.observe()
            normalizer.update(raw)
            obs = normalizer.normalize(raw)
            mean, std = policy.forward(obs)
            action, pre_clamp, logp = sample_action(mean, std, act_rng)
            vals = value.forward(obs)
            res = env.step(action)
            terms = res.reward_terms
            reward = stage_reward(terms, cfg.curriculum, stage)
            term_sums += np.array([terms.r1.mean(), terms.r2.mean(),
                                   terms.r3.mean()])
            obs_buf[:, t] = obs
            act_buf[:, t] = pre_clamp
            logp_buf[:, t] = logp
            rew_buf[:, t] = reward
            val_buf[:, t] = vals
            done_buf[:, t] = res.done

            ep_return += reward
            for i in np.flatnonzero(res.done):
                completed_returns.append(float(ep_return[i]))
                completed_success.append(bool(res.success[i]))
                ep_return[i] = 0.0

        bootstrap = value.forward(normalizer.normalize(env.observe()))
        buffer = RolloutBuffer(obs_buf, act_buf, logp_buf, rew_buf,
                               val_buf, done_buf, bootstrap)
        stats = ppo_update(policy, value, p_opt, v_opt, buffer, cfg.ppo,
                           upd_rng)
        if stats.get("aborted"):
            result.failed = True
            result.failure = (f"non-finite loss at epoch {epoch}: "
                              f"policy={stats['policy_loss']} "
                              f"value={stats['value_loss']}")
            restore(policy, value, best_snap)
            break

        if completed_returns:
            last_mean_return = float(np.mean(completed_returns))
            success_rate = float(np.mean(completed_success))
        else:
            success_rate = 0.0
        row = {
            "epoch": epoch,
            "stage": stage,
            "mean_return": last_mean_return,
            "success_rate": success_rate,
            "r1_mean": float(term_sums[0] / t_len),
            "r2_mean": float(term_sums[1] / t_len),
            "r3_mean": float(term_sums[2] / t_len),
            "policy_loss": stats["policy_loss"],
            "value_loss": stats["value_loss"],
            "entropy": stats["entropy"],
        }
        result.metrics.append(row)
        if log_fn:
            log_fn(row)

        snap = snapshot(policy, value)
        prev_best = stage_state.best_return
        stage_state = advance_stage(stage_state, cfg.curriculum,
                                    last_mean_return, snap)
        if last_mean_return >= prev_best:
            best_snap = snap
        if stage_state.transitioned:
            # continue from the best model of the completed stage
            restore(policy, value, stage_state.best_checkpoint)
            stage_state.best_checkpoint = None
            stage_state.best_return = -np.inf
            best_snap = snapshot(policy, value)
            if log_fn:
                log_fn({"stage_transition": stage_state.current_stage,
                        "epoch": epoch})

        if out_dir is not None:
            save_agent(os.path.join(out_dir, "last.ckpt"), policy, value,
                       normalizer, {"epoch": epoch, "stage": stage})

    result.final_stage = stage_state.current_stage
    if out_dir is not None:
        write_metrics_csv(os.path.join(out_dir, "metrics.csv"), result.metrics)
        save_agent(os.path.join(out_dir, "final.ckpt"), policy, value,
                   normalizer, {"epoch": len(result.metrics),
                                "stage": stage_state.current_stage})
        restore(policy, value, best_snap)
        save_agent(os.path.join(out_dir, "best.ckpt"), policy, value,
                   normalizer, {"selected": "best_mean_return"})
    return result
