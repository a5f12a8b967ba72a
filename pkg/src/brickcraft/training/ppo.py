"""Clipped-surrogate PPO over the construction environment."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, fields
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .. import autodiff as ad
from ..actions import masked_probs, masked_sample
from ..assembly import BrickAction
from ..env import BrickEnv, Observation, Termination
from ..models import ModelConfig, init_policy, make_batch, policy_forward
from ..targets import TargetInfo
from .avn import TrainingDiverged

log = logging.getLogger(__name__)


@dataclass
class PpoConfig:
    gamma: float = 0.75
    lam: float = 0.9
    clip_eps: float = 0.2
    epochs: int = 6
    minibatches: int = 32
    n_steps: int = 512          # per environment per iteration
    n_envs: int = 8
    ent_coef: float = 0.01
    vf_coef: float = 1.0
    lr: float = 1e-4
    total_timesteps: int = 500_000
    max_grad_norm: float = 0.5
    normalize_adv: bool = True
    eval_every: int = 0         # iterations; 0 disables held-out evaluation

    def __post_init__(self):
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.n_steps * self.n_envs < self.minibatches:
            raise ValueError("fewer samples per iteration than minibatches")

    @classmethod
    def mnist(cls, **kw) -> "PpoConfig":
        return cls(**{"gamma": 0.5, "total_timesteps": 300_000, **kw})

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def compute_gae(rewards, values, dones, gamma: float, lam: float, last_value=0.0):
    """Advantages and returns along axis 0.

    ``dones[t]`` marks that the episode ended at step t, so nothing is
    bootstrapped across it. ``last_value`` bootstraps the final step when it
    is not terminal.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=np.float64)
    adv = np.zeros_like(r)
    nxt_v = np.asarray(last_value, dtype=np.float64) * np.ones_like(r[0])
    nxt_a = np.zeros_like(r[0])
    for t in range(len(r) - 1, -1, -1):
        live = 1.0 - d[t]
        delta = r[t] + gamma * nxt_v * live - v[t]
        nxt_a = delta + gamma * lam * live * nxt_a
        adv[t] = nxt_a
        nxt_v = v[t]
    return adv, adv + v


def clipped_objective(ratio, adv, eps):
    """Per-sample min(r A, clip(r, 1-eps, 1+eps) A) on plain arrays."""
    ratio = np.asarray(ratio, dtype=np.float64)
    return np.minimum(ratio * adv, np.clip(ratio, 1 - eps, 1 + eps) * adv)


# -- acting -----------------------------------------------------------------

def _pivot_mask(masks, n_max):
    m = np.zeros(n_max, dtype=bool)
    m[:len(masks.pivot_valid)] = masks.pivot_valid
    return m


def act(params, cfg: ModelConfig, observations: Sequence[Observation], rng, greedy: bool = False):
    """One batched forward; returns [(action, logp, value)] per observation."""
    batch = make_batch([o.graph for o in observations], [o.views for o in observations])
    out = policy_forward(params, cfg, batch)
    piv = out.pivot_logits.data
    off = out.offset_logits.data
    res = []
    for b, o in enumerate(observations):
        s = batch.starts[b]
        if greedy:
            pp = masked_probs(piv[b, :len(o.graph)], o.masks.pivot_valid)
            i = int(np.argmax(pp))
            po = masked_probs(off[s + i], o.masks.offset_valid[i])
            k = int(np.argmax(po))
            a, lp = BrickAction(i, k), float(np.log(pp[i]) + np.log(po[k]))
        else:
            a, lp = masked_sample(piv[b], lambda i: off[s + i], o.masks, rng)
        res.append((a, lp, float(out.value.data[b])))
    return res


class PolicyAgent:
    """Adapter so a trained network can drive ``run_episode``."""

    def __init__(self, params, cfg: ModelConfig, greedy: bool = False):
        self.params, self.cfg, self.greedy = params, cfg, greedy

    def __call__(self, obs: Observation, rng) -> BrickAction:
        return act(self.params, self.cfg, [obs], rng, self.greedy)[0][0]


# -- update -------------------------------------------------------------------

class Rollout(NamedTuple):
    graphs: list
    views: list
    pivot_mask: np.ndarray    # (S, n_max)
    offset_mask: np.ndarray   # (S, n_off), row of the chosen pivot
    pivots: np.ndarray
    offsets: np.ndarray
    logp: np.ndarray
    adv: np.ndarray
    returns: np.ndarray

    @property
    def size(self) -> int:
        return len(self.graphs)

    def subset(self, idx) -> "Rollout":
        return Rollout([self.graphs[i] for i in idx], [self.views[i] for i in idx],
                       *(a[idx] for a in self[2:]))


def _pick(t: ad.Tensor, cols) -> ad.Tensor:
    onehot = np.zeros(t.shape, dtype=t.data.dtype)
    onehot[np.arange(t.shape[0]), cols] = 1
    return ad.sum(ad.mul(t, onehot), axis=1)


def _entropy(logp: ad.Tensor) -> ad.Tensor:
    # masked entries of masked_log_softmax are 0, so they contribute nothing
    return ad.mul(ad.sum(ad.mul(ad.exp(logp), logp), axis=1), -1.0)


def ppo_loss(params, cfg: ModelConfig, pc: PpoConfig, mb: Rollout):
    batch = make_batch(mb.graphs, mb.views)
    out = policy_forward(params, cfg, batch)
    lp_piv = ad.masked_log_softmax(out.pivot_logits, mb.pivot_mask)
    off_rows = ad.gather_rows(out.offset_logits, batch.starts + mb.pivots)
    lp_off = ad.masked_log_softmax(off_rows, mb.offset_mask)
    logp = ad.add(_pick(lp_piv, mb.pivots), _pick(lp_off, mb.offsets))
    ratio = ad.exp(ad.sub(logp, mb.logp.astype(logp.data.dtype)))
    adv = mb.adv.astype(logp.data.dtype)
    surr = ad.minimum(ad.mul(ratio, adv), ad.mul(ad.clip(ratio, 1 - pc.clip_eps, 1 + pc.clip_eps), adv))
    pg = ad.mul(ad.mean(surr), -1.0)
    vf = ad.mse(out.value, mb.returns.astype(logp.data.dtype))
    ent = ad.mean(ad.add(_entropy(lp_piv), _entropy(lp_off)))
    total = ad.sub(ad.add(pg, ad.mul(vf, pc.vf_coef)), ad.mul(ent, pc.ent_coef))
    r = ratio.data
    stats = {"policy_loss": pg.item(), "value_loss": vf.item(), "entropy": ent.item(),
             "clip_frac": float(np.mean(np.abs(r - 1) > pc.clip_eps)),
             "approx_kl": float(np.mean(mb.logp - logp.data))}
    return total, stats


def ppo_update(params, opt: ad.Adam, cfg: ModelConfig, pc: PpoConfig, data: Rollout, rng) -> dict:
    """``epochs`` passes over ``data`` in ``minibatches`` shuffled chunks."""
    if pc.normalize_adv and data.size > 1:
        a = data.adv
        data = data._replace(adv=(a - a.mean()) / (a.std() + 1e-8))
    n = data.size
    acc: dict[str, list] = {}
    for _ in range(pc.epochs):
        order = rng.permutation(n)
        for chunk in np.array_split(order, pc.minibatches):
            if not len(chunk):
                continue
            loss, stats = ppo_loss(params, cfg, pc, data.subset(chunk))
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(f"non-finite PPO loss: {stats}")
            params.zero_grad()
            ad.backward(loss)
            stats["grad_norm"] = opt.step()
            for k, v in stats.items():
                acc.setdefault(k, []).append(v)
    return {k: float(np.mean(v)) for k, v in acc.items()}


# -- training loop ------------------------------------------------------------

TargetSampler = Callable[[np.random.Generator], TargetInfo]


def _collect(params, cfg, pc, envs, obs, rngs, sampler, episode_log):
    T, E = pc.n_steps, len(envs)
    rec = {k: [] for k in ("graphs", "views", "pm", "om", "piv", "off", "logp", "val", "rew", "done")}
    for _ in range(T):
        decisions = act(params, cfg, obs, rngs[0])
        for e, (env, (a, lp, v)) in enumerate(zip(envs, decisions)):
            o = obs[e]
            rec["graphs"].append(o.graph)
            rec["views"].append(o.views)
            rec["pm"].append(_pivot_mask(o.masks, cfg.n_max))
            rec["om"].append(o.masks.offset_valid[a.pivot])
            rec["piv"].append(a.pivot)
            rec["off"].append(a.offset)
            rec["logp"].append(lp)
            rec["val"].append(v)
            nxt, r, done, info = env.step(a)
            rec["rew"].append(r)
            rec["done"].append(done)
            if done:
                episode_log.append((float(env.record().episode_return), env.final_iou,
                                    env.termination.value))
                nxt = _reset_until_live(env, sampler, rngs[e + 1], episode_log)
            obs[e] = nxt
    last = np.array([d[2] for d in act(params, cfg, obs, rngs[0])])
    shape = (T, E)
    rew = np.array(rec["rew"]).reshape(shape)
    val = np.array(rec["val"]).reshape(shape)
    done = np.array(rec["done"]).reshape(shape)
    adv, ret = compute_gae(rew, val, done, pc.gamma, pc.lam, last)
    data = Rollout(rec["graphs"], rec["views"], np.array(rec["pm"]), np.array(rec["om"]),
                   np.array(rec["piv"]), np.array(rec["off"]), np.array(rec["logp"]),
                   adv.ravel(), ret.ravel())
    return data, obs


def _reset_until_live(env: BrickEnv, sampler, rng, episode_log, tries: int = 100):
    for _ in range(tries):
        obs = env.reset(sampler(rng), int(rng.integers(2**31)))
        if not env.done:
            return obs
        episode_log.append((0.0, env.final_iou, env.termination.value))
    raise RuntimeError("target sampler keeps producing episodes that end at reset")


def evaluate_policy(params, cfg: ModelConfig, env: BrickEnv, targets: Sequence[TargetInfo],
                    seed: int = 0, greedy: bool = True) -> dict:
    from ..env import run_episode
    rng = np.random.default_rng(seed)
    agent = PolicyAgent(params, cfg, greedy)
    recs = [run_episode(agent, env, t, seed + i, rng) for i, t in enumerate(targets)]
    return {"mean_return": float(np.mean([r.episode_return for r in recs])),
            "mean_iou": float(np.mean([r.final_iou for r in recs])),
            "invalid": sum(r.termination == Termination.INVALID.value for r in recs)}


@dataclass
class PpoResult:
    params: ad.ParamStore
    history: list
    episodes: list            # (return, final_iou, termination) in completion order

    def final_ious(self) -> np.ndarray:
        return np.array([e[1] for e in self.episodes])

    def write_csv(self, path) -> None:
        if not self.history:
            return
        keys = list(self.history[0])
        for row in self.history[1:]:
            keys += [k for k in row if k not in keys]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            w.writerows(self.history)


def train_ppo(env_factory: Callable[[], BrickEnv], cfg: ModelConfig, pc: PpoConfig,
              sampler: TargetSampler, seed: int = 0, eval_targets: Sequence[TargetInfo] = (),
              params=None, callback=None) -> PpoResult:
    """Synchronous rollouts over ``n_envs`` environments, GAE, then clipped updates."""
    ss = np.random.SeedSequence(seed)
    kids = ss.spawn(pc.n_envs + 2)
    rngs = [np.random.default_rng(k) for k in kids[:pc.n_envs + 1]]
    upd_rng = np.random.default_rng(kids[-1])
    params = params if params is not None else init_policy(cfg, seed)
    opt = ad.Adam(params, lr=pc.lr, clip_norm=pc.max_grad_norm)
    envs = [env_factory() for _ in range(pc.n_envs)]
    episodes: list = []
    obs = [_reset_until_live(env, sampler, rngs[e + 1], episodes) for e, env in enumerate(envs)]
    history = []
    steps = 0
    it = 0
    per_iter = pc.n_steps * pc.n_envs
    while steps + per_iter <= max(pc.total_timesteps, per_iter):
        seen = len(episodes)
        data, obs = _collect(params, cfg, pc, envs, obs, rngs, sampler, episodes)
        steps += per_iter
        stats = ppo_update(params, opt, cfg, pc, data, upd_rng)
        recent = episodes[seen:] or episodes[-1:]
        row = {"iteration": it, "timesteps": steps,
               "train_mean_return": float(np.mean([e[0] for e in recent])) if recent else float("nan"),
               "train_mean_iou": float(np.mean([e[1] for e in recent])) if recent else float("nan"),
               "episodes": len(episodes) - seen, **stats}
        if pc.eval_every and eval_targets and (it + 1) % pc.eval_every == 0:
            ev = evaluate_policy(params, cfg, env_factory(), eval_targets, seed)
            row.update(test_mean_return=ev["mean_return"], test_mean_iou=ev["mean_iou"])
        history.append(row)
        log.info("ppo it %d steps %d iou %.3f", it, steps, row["train_mean_iou"])
        if callback:
            callback(row, params)
        it += 1
    return PpoResult(params, history, episodes)


def ppo_config_dict(pc: PpoConfig) -> dict:
    return asdict(pc)
