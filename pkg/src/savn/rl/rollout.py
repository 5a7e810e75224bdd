"""Policies for both players, rollout collection and the joint PPO update."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from savn.env import GameSetup, VecEnv
from savn.nn import EncoderConfig, PolicyNet, adam_update, check_finite, clip_grads, log_softmax, sample
from savn.rl.ppo import (
    ATTACKER_HEADS,
    PpoConfig,
    TrajectoryBatch,
    attacker_loss,
    branch_loss,
    compute_gae,
    normalize,
    total_critic,
    total_loss,
)
from savn.world import AttackerSpec


class PolicySet:
    """The agent network and, when any attacker head is learned, the attacker network."""

    def __init__(self, setup: GameSetup, model: EncoderConfig, attacker: AttackerSpec, seed: int = 0):
        n_rays, audio_shape = setup.obs_shapes
        sizes = setup.head_sizes()
        self.agent = PolicyNet(model, n_rays, audio_shape, {"agent": sizes["agent"]}, seed=[seed, 10])
        heads = {h: sizes[h] for h in attacker.learned_heads}
        self.attacker = PolicyNet(model, n_rays, audio_shape, heads, seed=[seed, 11]) if heads else None

    def nets(self) -> dict[str, PolicyNet]:
        out = {"agent": self.agent}
        if self.attacker is not None:
            out["attacker"] = self.attacker
        return out

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, net in self.nets().items():
            h.update(name.encode())
            h.update(net.store.digest().encode())
        return h.hexdigest()


@dataclass
class RolloutState:
    """What carries over between rollout segments."""

    visual: np.ndarray
    audio: np.ndarray
    masks: np.ndarray
    hidden: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def start(cls, venv: VecEnv, policies: PolicySet) -> "RolloutState":
        visual, audio = venv.reset()
        hidden = {name: net.initial_state(venv.n_envs) for name, net in policies.nets().items()}
        return cls(visual, audio, np.zeros(venv.n_envs), hidden)


def select(logits: np.ndarray, rng: np.random.Generator | None, greedy: bool = False):
    """Sample (or argmax) actions from logits; returns ``(actions, logprobs)``."""
    logp = log_softmax(logits)
    if greedy:
        a = np.argmax(logits, axis=-1)
        return a, logp[np.arange(a.size), a]
    return sample(np.exp(logp), rng)


def rollout(venv: VecEnv, policies: PolicySet, T: int, state: RolloutState, rngs: dict[str, np.random.Generator]):
    """Collect ``T`` steps from every env. Returns ``(batch, finished_episodes)``.

    ``rngs`` holds one sampling generator per network name.
    """
    B = venv.n_envs
    nets = policies.nets()
    batch = TrajectoryBatch(
        visual=np.empty((T, *state.visual.shape)),
        audio=np.empty((T, *state.audio.shape)),
        masks=np.empty((T, B)),
        dones=np.empty((T, B)),
        rewards_agent=np.empty((T, B)),
        rewards_attacker=np.empty((T, B)),
        h0={k: h.copy() for k, h in state.hidden.items()},
    )
    heads = [(name, head) for name, net in nets.items() for head in net.heads]
    for _, head in heads:
        batch.actions[head] = np.empty((T, B), dtype=np.int64)
        batch.logprobs[head] = np.empty((T, B))
        batch.values[head] = np.empty((T + 1, B))
    episodes = []
    for t in range(T):
        batch.visual[t], batch.audio[t], batch.masks[t] = state.visual, state.audio, state.masks
        for name, net in nets.items():
            logits, values, state.hidden[name] = net.act(state.visual, state.audio, state.hidden[name], state.masks)
            for head in net.heads:
                a, lp = select(logits[head], rngs[name])
                batch.actions[head][t], batch.logprobs[head][t], batch.values[head][t] = a, lp, values[head]
        learned = None
        if policies.attacker is not None:
            learned = [{h: int(batch.actions[h][t, i]) for h in policies.attacker.heads} for i in range(B)]
        visual, audio, r_ag, r_at, dones, finished = venv.step(batch.actions["agent"][t], learned)
        batch.rewards_agent[t], batch.rewards_attacker[t], batch.dones[t] = r_ag, r_at, dones
        episodes.extend(finished)
        state.visual, state.audio, state.masks = visual, audio, 1.0 - dones
    for name, net in nets.items():
        _, values, _ = net.act(state.visual, state.audio, state.hidden[name], state.masks)
        for head in net.heads:
            batch.values[head][T] = values[head]
    return batch, episodes


def advantages(batch: TrajectoryBatch, cfg: PpoConfig) -> dict:
    out = {}
    for head, vals in batch.values.items():
        adv, ret = compute_gae(batch.rewards_for(head), vals, batch.dones, cfg.gamma, cfg.tau)
        out[head] = (normalize(adv) if cfg.normalize_advantages else adv, ret)
    return out


def _minibatch_step(nets, batch: TrajectoryBatch, adv: dict, cols, cfg: PpoConfig, weights: dict, joint: bool):
    """One gradient step on the env columns ``cols``; returns branch results and grad norms."""
    grads, results = {}, {}
    for name, net in nets.items():
        logits, values, cache = net.forward(batch.visual[:, cols], batch.audio[:, cols], batch.h0[name][cols], batch.masks[:, cols])
        g_logits, g_values = {}, {}
        for head in net.heads:
            A, R = adv[head]
            res = branch_loss(logits[head], values[head], batch.actions[head][:, cols], batch.logprobs[head][:, cols],
                              A[:, cols], R[:, cols], cfg, head)
            results[head] = res
            g_logits[head] = weights[head] * res.g_logits
            g_values[head] = weights[head] * res.g_values
        grads[name] = net.backward(cache, g_logits, g_values)
        check_finite(grads[name], where=f"{name}.")
    if joint:
        norm = clip_grads(list(grads.values()), cfg.max_grad_norm)
        for name, net in nets.items():
            adam_update(net.store, grads[name], cfg.lr, eps=cfg.adam_eps, max_grad_norm=None)
        norms = {name: norm for name in nets}
    else:
        norms = {name: adam_update(net.store, grads[name], cfg.lr, eps=cfg.adam_eps, max_grad_norm=cfg.max_grad_norm)
                 for name, net in nets.items()}
    return results, norms


def update(policies: PolicySet, batch: TrajectoryBatch, cfg: PpoConfig, players=("agent", "attacker"), joint: bool = True) -> dict:
    """PPO epochs on the weighted four-branch loss.

    ``players`` selects which networks are optimized; the others are frozen
    and contribute nothing. With ``joint`` the gradient of the single total
    loss is clipped by one global norm across both networks; otherwise each
    network is clipped on its own.
    """
    nets = {k: v for k, v in policies.nets().items() if k in players}
    weights = cfg.weights
    adv = advantages(batch, cfg)
    if not 1 <= cfg.minibatches <= batch.B:
        raise ValueError(f"minibatches={cfg.minibatches} needs 1..{batch.B} environments to split")
    # recurrent minibatches keep whole env sequences together
    groups = np.array_split(np.arange(batch.B), cfg.minibatches)
    stats: dict = {}
    for _ in range(cfg.ppo_epochs):
        for cols in groups:
            results, norms = _minibatch_step(nets, batch, adv, cols, cfg, weights, joint)
        losses = {h: r.loss for h, r in results.items()}
        stats.update(
            loss_total=total_loss(losses, cfg),
            loss_attacker=attacker_loss(losses),
            grad_norm=max(norms.values()) if norms else 0.0,
        )
        for head, r in results.items():
            stats[f"loss_{head}"] = r.loss
            stats[f"entropy_{head}"] = r.entropy
            stats[f"clip_fraction_{head}"] = r.clip_fraction
            stats[f"approx_kl_{head}"] = r.approx_kl
    att_values = {h: batch.values[h][:-1] for h in ATTACKER_HEADS if h in batch.values}
    if att_values:
        stats["total_critic"] = float(np.mean(total_critic(att_values, cfg)))
    return stats
