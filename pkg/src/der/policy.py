"""The routing agent: encoder features, actor softmax head, critic value head.

Both heads are two-layer perceptrons (tanh hidden layer) over a frozen text
encoder.  Gradients are computed analytically; the optimizer is a standard
first/second-moment adaptive scheme.  Old-parameter snapshots support
off-policy probability ratios during updates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoding import Encoder, HashedNgramEncoder
from .types import Action, State, render_state


@dataclass(frozen=True)
class ActionDistribution:
    """Probabilities over the expert pool; sums to one."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        p = self.probs
        if p.ndim != 1 or p.size < 1:
            raise ValueError("probs must be a nonempty vector")
        if not np.all(np.isfinite(p)):
            raise ValueError("probs must be finite")
        if np.any(p < 0.0) or np.any(p > 1.0):
            raise ValueError("probs must lie in [0, 1]")
        if abs(float(p.sum()) - 1.0) > 1e-9:
            raise ValueError(f"probs must sum to 1, got {p.sum()!r}")

    def __len__(self) -> int:
        return int(self.probs.size)


@dataclass
class HeadParams:
    """Two-layer head: ``out = tanh(x @ w1 + b1) @ w2 + b2``."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def copy(self) -> "HeadParams":
        return HeadParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.w1, self.b1, self.w2, self.b2)

    def check_finite(self) -> None:
        if not all(np.all(np.isfinite(a)) for a in self.arrays()):
            raise FloatingPointError("head parameters contain non-finite values")


def init_head(dim: int, hidden: int, out: int, rng: np.random.Generator) -> HeadParams:
    return HeadParams(
        w1=rng.normal(0.0, 1.0 / np.sqrt(dim), size=(dim, hidden)),
        b1=np.zeros(hidden),
        w2=rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, out)),
        b2=np.zeros(out),
    )


@dataclass
class PolicyParams:
    """Actor and critic parameter sets plus their frozen old snapshots."""

    actor: HeadParams
    critic: HeadParams
    actor_old: HeadParams = field(init=False)
    critic_old: HeadParams = field(init=False)

    def __post_init__(self) -> None:
        self.actor_old = self.actor.copy()
        self.critic_old = self.critic.copy()

    def snapshot(self) -> None:
        """Freeze the current parameters as the collection-time policy."""
        self.actor_old = self.actor.copy()
        self.critic_old = self.critic.copy()


def head_forward(params: HeadParams, x: np.ndarray) -> np.ndarray:
    hidden = np.tanh(x @ params.w1 + params.b1)
    return hidden @ params.w2 + params.b2


def softmax(logits: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logits")
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class Policy:
    """Bundles the encoder with actor/critic heads for state-level queries."""

    def __init__(
        self,
        encoder: Encoder,
        n_experts: int,
        hidden: int = 128,
        seed: int = 0,
    ):
        if n_experts < 1:
            raise ValueError("need at least one expert")
        self.encoder = encoder
        self.n_experts = n_experts
        self.hidden = hidden
        rng = np.random.default_rng(seed)
        actor = init_head(encoder.dim, hidden, n_experts, rng)
        # Zeroed output layer -> uniform initial distribution, so early
        # exploration carries no arbitrary bias from the initialization.
        actor.w2[...] = 0.0
        actor.b2[...] = 0.0
        self.params = PolicyParams(
            actor=actor,
            critic=init_head(encoder.dim, hidden, 1, rng),
        )

    def features(self, state: State) -> np.ndarray:
        return self.encoder.encode(render_state(state))

    def action_distribution(self, state: State, *, old: bool = False) -> ActionDistribution:
        head = self.params.actor_old if old else self.params.actor
        logits = head_forward(head, self.features(state))
        return ActionDistribution(softmax(logits))

    def value_estimate(self, state: State, *, old: bool = False) -> float:
        head = self.params.critic_old if old else self.params.critic
        value = float(head_forward(head, self.features(state))[0])
        if not np.isfinite(value):
            raise FloatingPointError("non-finite value estimate")
        return value

    def snapshot_old(self) -> None:
        self.params.snapshot()


def select_action(
    dist: ActionDistribution,
    mode: str = "sample",
    rng: np.random.Generator | None = None,
) -> Action:
    """Draw from the distribution, or take the argmax (ties -> lowest index)."""
    if mode == "greedy":
        return Action(int(np.argmax(dist.probs)))
    if mode == "sample":
        if rng is None:
            raise ValueError("sampling requires a seeded generator")
        return Action(int(rng.choice(len(dist), p=dist.probs)))
    raise ValueError(f"unknown selection mode {mode!r}")


def actor_loss_and_grad(
    params: HeadParams,
    features: np.ndarray,
    actions: np.ndarray,
    old_log_probs: np.ndarray,
    advantages: np.ndarray,
    clip_epsilon: float,
    entropy_coef: float = 0.0,
) -> tuple[float, HeadParams]:
    """Negated clipped surrogate objective and its head-parameter gradient.

    Minimizing the returned loss maximizes the mean of
    ``min(ratio * A, clip(ratio) * A)`` over the batch.
    """
    batch = features.shape[0]
    z1 = features @ params.w1 + params.b1
    hidden = np.tanh(z1)
    logits = hidden @ params.w2 + params.b2
    log_probs = log_softmax(logits)
    probs = np.exp(log_probs)

    idx = np.arange(batch)
    lp = log_probs[idx, actions]
    ratio = np.exp(lp - old_log_probs)
    surr1 = ratio * advantages
    surr2 = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * advantages
    objective = float(np.minimum(surr1, surr2).mean())
    loss = -objective

    # min is the unclipped branch iff surr1 <= surr2; otherwise the clip is
    # active outside [1-eps, 1+eps] and the derivative vanishes.
    d_lp = np.where(surr1 <= surr2, ratio * advantages, 0.0) / batch
    d_logits = -d_lp[:, None] * (_one_hot(actions, logits.shape[1]) - probs)

    if entropy_coef != 0.0:
        plogp = np.where(probs > 0.0, probs * log_probs, 0.0)
        entropy = -plogp.sum(axis=1)
        loss -= entropy_coef * float(entropy.mean())
        d_logits += (entropy_coef / batch) * probs * (log_probs + entropy[:, None])

    grads = _backprop_head(params, features, hidden, d_logits)
    return loss, grads


def critic_loss_and_grad(
    params: HeadParams,
    features: np.ndarray,
    returns: np.ndarray,
) -> tuple[float, HeadParams]:
    """Mean squared difference between predicted values and returns."""
    batch = features.shape[0]
    z1 = features @ params.w1 + params.b1
    hidden = np.tanh(z1)
    values = (hidden @ params.w2 + params.b2)[:, 0]
    delta = values - returns
    loss = float(np.mean(delta**2))
    d_values = (2.0 / batch) * delta
    grads = _backprop_head(params, features, hidden, d_values[:, None])
    return loss, grads


def _one_hot(indices: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((indices.shape[0], width))
    out[np.arange(indices.shape[0]), indices] = 1.0
    return out


def _backprop_head(
    params: HeadParams,
    features: np.ndarray,
    hidden: np.ndarray,
    d_out: np.ndarray,
) -> HeadParams:
    d_w2 = hidden.T @ d_out
    d_b2 = d_out.sum(axis=0)
    d_hidden = d_out @ params.w2.T
    d_z1 = d_hidden * (1.0 - hidden**2)
    d_w1 = features.T @ d_z1
    d_b1 = d_z1.sum(axis=0)
    return HeadParams(d_w1, d_b1, d_w2, d_b2)


class AdamOptimizer:
    """Per-parameter adaptive step sizes from running gradient moments."""

    def __init__(self, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: list[np.ndarray] | None = None
        self._v: list[np.ndarray] | None = None
        self._t = 0

    def update(self, params: HeadParams, grads: HeadParams) -> None:
        """Apply one descent step in place."""
        garrays = grads.arrays()
        if self._m is None:
            self._m = [np.zeros_like(g) for g in garrays]
            self._v = [np.zeros_like(g) for g in garrays]
        self._t += 1
        for p, g, m, v in zip(params.arrays(), garrays, self._m, self._v):
            if not np.all(np.isfinite(g)):
                raise FloatingPointError("non-finite gradient")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g**2
            m_hat = m / (1.0 - self.beta1**self._t)
            v_hat = v / (1.0 - self.beta2**self._t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def save_policy(path: str | Path, policy: Policy, expert_names: list[str] | None = None) -> None:
    """Write all parameter tensors plus encoder config and pool size.

    The format is a NumPy ``.npz`` archive; float64 tensors round-trip
    bit-exactly, so reloaded policies emit identical action distributions.
    """
    meta = {
        "n_experts": policy.n_experts,
        "hidden": policy.hidden,
        "encoder": getattr(policy.encoder, "config", lambda: {"kind": "unknown"})(),
        "expert_names": expert_names or [],
    }
    np.savez(
        Path(path),
        meta=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
        actor_w1=policy.params.actor.w1,
        actor_b1=policy.params.actor.b1,
        actor_w2=policy.params.actor.w2,
        actor_b2=policy.params.actor.b2,
        critic_w1=policy.params.critic.w1,
        critic_b1=policy.params.critic.b1,
        critic_w2=policy.params.critic.w2,
        critic_b2=policy.params.critic.b2,
    )


def load_policy(path: str | Path) -> tuple[Policy, dict]:
    """Rebuild a policy from a checkpoint; returns (policy, metadata)."""
    with np.load(Path(path)) as archive:
        meta = json.loads(bytes(archive["meta"]).decode("utf-8"))
        encoder_cfg = meta.get("encoder", {})
        if encoder_cfg.get("kind") != "hashed_ngram":
            raise ValueError(f"unsupported encoder kind {encoder_cfg.get('kind')!r}")
        encoder = HashedNgramEncoder(dim=int(encoder_cfg["dim"]))
        policy = Policy(encoder, n_experts=int(meta["n_experts"]), hidden=int(meta["hidden"]))
        policy.params.actor = HeadParams(
            archive["actor_w1"], archive["actor_b1"],
            archive["actor_w2"], archive["actor_b2"],
        )
        policy.params.critic = HeadParams(
            archive["critic_w1"], archive["critic_b1"],
            archive["critic_w2"], archive["critic_b2"],
        )
    policy.params.snapshot()
    policy.params.actor.check_finite()
    policy.params.critic.check_finite()
    return policy, meta
