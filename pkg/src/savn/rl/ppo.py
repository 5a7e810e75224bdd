"""Rollout storage, advantage estimation and the four-branch clipped PPO loss."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from savn.nn import NonFiniteError, log_softmax

BRANCHES = ("cat", "vol", "pos", "agent")
ATTACKER_HEADS = ("pos", "vol", "cat")


@dataclass(frozen=True)
class PpoConfig:
    clip: float = 0.1
    ppo_epochs: int = 4
    minibatches: int = 1
    value_loss_coef: float = 0.5
    entropy_coef: float = 0.02
    lr: float = 2.5e-4
    adam_eps: float = 1e-5
    gamma: float = 0.99
    tau: float = 0.95
    num_steps: int = 150
    max_grad_norm: float = 0.5
    w_cat: float = 1 / 6
    w_vol: float = 1 / 6
    w_pos: float = 1 / 6
    w_agent: float = 1 / 2
    surrogate: str = "clipped"
    normalize_advantages: bool = True
    critic_w_pos: float = 1 / 3
    critic_w_vol: float = 1 / 3
    critic_w_cat: float = 1 / 3

    def __post_init__(self):
        if abs(self.w_cat + self.w_vol + self.w_pos + self.w_agent - 1.0) > 1e-12:
            raise ValueError("branch weights must sum to 1")
        if not (0 <= self.gamma <= 1 and 0 <= self.tau <= 1):
            raise ValueError("gamma and tau must lie in [0, 1]")
        if self.surrogate not in ("clipped", "vanilla"):
            raise ValueError("surrogate must be 'clipped' or 'vanilla'")
        if self.minibatches < 1:
            raise ValueError("minibatches must be >= 1")
        if self.num_steps < 1 or self.ppo_epochs < 1:
            raise ValueError("num_steps and ppo_epochs must be positive")

    @property
    def weights(self) -> dict[str, float]:
        return {"cat": self.w_cat, "vol": self.w_vol, "pos": self.w_pos, "agent": self.w_agent}

    @property
    def critic_weights(self) -> dict[str, float]:
        return {"pos": self.critic_w_pos, "vol": self.critic_w_vol, "cat": self.critic_w_cat}


@dataclass
class TrajectoryBatch:
    """``(T, B)`` rollout segment for both players.

    ``masks[t]`` is 0 where a new episode starts at step ``t`` (the recurrent
    state entering that step is zeroed); ``dones[t]`` is 1 where the episode
    ended after step ``t``. ``values[h]`` has ``T + 1`` rows, the last being
    the bootstrap estimate for the state after the segment.
    """

    visual: np.ndarray
    audio: np.ndarray
    masks: np.ndarray
    dones: np.ndarray
    rewards_agent: np.ndarray
    rewards_attacker: np.ndarray
    h0: dict[str, np.ndarray] = field(default_factory=dict)
    actions: dict[str, np.ndarray] = field(default_factory=dict)
    logprobs: dict[str, np.ndarray] = field(default_factory=dict)
    values: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.masks.shape[0]

    @property
    def B(self) -> int:
        return self.masks.shape[1]

    def rewards_for(self, head: str) -> np.ndarray:
        return self.rewards_agent if head == "agent" else self.rewards_attacker

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.visual, self.audio, self.masks, self.dones, self.rewards_agent, self.rewards_attacker):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        for group in (self.h0, self.actions, self.logprobs, self.values):
            for k in sorted(group):
                h.update(k.encode())
                h.update(np.ascontiguousarray(group[k], dtype="<f8").tobytes())
        return h.hexdigest()


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, gamma: float, tau: float):
    """Generalized advantage estimates and returns.

    Parameters
    ----------
    rewards, dones : (T, B) arrays
    values : (T + 1, B) array; row ``T`` is the bootstrap value
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    T = rewards.shape[0]
    if values.shape[0] != T + 1:
        raise ValueError(f"values need T + 1 = {T + 1} rows (bootstrap included), got {values.shape[0]}")
    adv = np.zeros_like(rewards)
    last = np.zeros_like(rewards[0])
    for t in range(T - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * nonterminal - values[t]
        last = delta + gamma * tau * nonterminal * last
        adv[t] = last
    return adv, adv + values[:T]


def normalize(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


@dataclass
class BranchResult:
    loss: float
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    approx_kl: float
    g_logits: np.ndarray
    g_values: np.ndarray


def branch_loss(logits, values, actions, old_logp, advantages, returns, cfg: PpoConfig, head: str = "") -> BranchResult:
    """One actor-critic branch: value regression, clipped surrogate and entropy bonus.

    ``L = c_v * mean((V - R)^2) - mean(min(rho A, clip(rho) A)) - beta * mean(H)``.
    Also returns gradients of ``L`` with respect to ``logits`` and ``values``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    n_act = logits.shape[-1]
    flat = logits.reshape(-1, n_act)
    N = flat.shape[0]
    a = np.asarray(actions).reshape(-1).astype(int)
    A = np.asarray(advantages, dtype=np.float64).reshape(-1)
    R = np.asarray(returns, dtype=np.float64).reshape(-1)
    V = np.asarray(values, dtype=np.float64).reshape(-1)
    try:
        logp_all = log_softmax(flat)
    except NonFiniteError as exc:
        raise NonFiniteError(f"head {head}: {exc}") from None
    p = np.exp(logp_all)
    rows = np.arange(N)
    logp = logp_all[rows, a]
    ent = -(p * logp_all).sum(axis=-1)
    ratio = np.exp(logp - np.asarray(old_logp, dtype=np.float64).reshape(-1))

    onehot = np.zeros_like(p)
    onehot[rows, a] = 1.0
    if cfg.surrogate == "clipped":
        surr1 = ratio * A
        surr2 = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * A
        policy_loss = -float(np.mean(np.minimum(surr1, surr2)))
        d_logp = -(ratio * A * (surr1 <= surr2)) / N
    else:
        policy_loss = -float(np.mean(A * logp))
        d_logp = -A / N
    value_loss = cfg.value_loss_coef * float(np.mean((V - R) ** 2))
    loss = value_loss + policy_loss - cfg.entropy_coef * float(ent.mean())
    if not math.isfinite(loss):
        raise NonFiniteError(f"non-finite loss in head {head}")

    g = d_logp[:, None] * (onehot - p)
    g += (cfg.entropy_coef / N) * p * (logp_all + ent[:, None])
    g_values = cfg.value_loss_coef * 2.0 * (V - R) / N
    return BranchResult(
        loss,
        policy_loss,
        value_loss,
        float(ent.mean()),
        float(np.mean(np.abs(ratio - 1.0) > cfg.clip)),
        float(0.5 * np.mean((logp - np.asarray(old_logp, dtype=np.float64).reshape(-1)) ** 2)),
        g.reshape(logits.shape),
        g_values.reshape(np.shape(values)),
    )


def total_loss(branch_losses: dict[str, float], cfg: PpoConfig | None = None) -> float:
    """Weighted sum of the branch losses; missing branches count as zero."""
    w = (cfg or PpoConfig()).weights
    return float(sum(w[k] * branch_losses.get(k, 0.0) for k in BRANCHES))


def attacker_loss(branch_losses: dict[str, float]) -> float:
    """Mean of the three attacker branch losses, for logging."""
    return float(sum(branch_losses.get(k, 0.0) for k in ATTACKER_HEADS) / 3.0)


def total_critic(values: dict[str, np.ndarray], cfg: PpoConfig | None = None) -> np.ndarray:
    """Weighted linear sum of the attacker's branch critics."""
    w = (cfg or PpoConfig()).critic_weights
    present = [k for k in ATTACKER_HEADS if k in values]
    if not present:
        raise ValueError("no attacker critics")
    return sum(w[k] * values[k] for k in present)
