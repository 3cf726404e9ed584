"""Clipped proximal policy optimization for the routing agent.

Training alternates between collecting one trajectory per question with the
frozen old policy/critic and, whenever the replay buffer holds ``buffer_size``
trajectories, running a fixed number of update iterations over uniformly
sampled buffered trajectories.  The buffer is emptied after every flush and
the old parameters are refreshed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np

from .policy import (
    AdamOptimizer,
    Policy,
    actor_loss_and_grad,
    critic_loss_and_grad,
)
from .types import Action, Question, State

if TYPE_CHECKING:  # pragma: no cover
    from .environment import EpisodeResult, RoutingEnv

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrajectoryStep:
    """One decision step as stored for PPO updates.

    ``advantage`` is the single-step form ``reward - value`` where the value
    comes from the old critic at collection time.
    """

    state: State
    action: Action
    reward: float
    value: float
    old_log_prob: float
    advantage: float
    return_to_go: float

    def __post_init__(self) -> None:
        for name in ("reward", "value", "old_log_prob", "advantage", "return_to_go"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.advantage != self.reward - self.value:
            raise ValueError("advantage must equal reward - value exactly")


Trajectory = tuple[TrajectoryStep, ...]


class ReplayBuffer:
    """Holds complete trajectories up to a fixed capacity."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._trajectories: list[Trajectory] = []

    def __len__(self) -> int:
        return len(self._trajectories)

    def add(self, trajectory: Trajectory) -> None:
        if not trajectory:
            raise ValueError("cannot buffer an empty trajectory")
        if len(self._trajectories) >= self.capacity:
            raise ValueError("buffer is full; flush before adding")
        self._trajectories.append(trajectory)

    def is_full(self) -> bool:
        return len(self._trajectories) == self.capacity

    def sample(self, rng: np.random.Generator) -> Trajectory:
        if not self._trajectories:
            raise ValueError("cannot sample from an empty buffer")
        return self._trajectories[int(rng.integers(len(self._trajectories)))]

    def clear(self) -> None:
        self._trajectories.clear()


@dataclass(frozen=True)
class PpoConfig:
    clip_epsilon: float = 0.2
    discount: float = 1.0
    buffer_size: int = 64
    updates_per_flush: int | None = None  # defaults to buffer_size
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    batch_size: int = 16
    max_epochs: int = 200
    plateau_window: int = 10
    plateau_tol: float = 1e-3
    entropy_coef: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must lie in (0, 1]")
        if self.buffer_size < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("buffer_size, batch_size and max_epochs must be positive")

    @property
    def flush_updates(self) -> int:
        return self.updates_per_flush if self.updates_per_flush is not None else self.buffer_size


def compute_returns(rewards: Sequence[float], discount: float) -> list[float]:
    """Discounted returns-to-go by backward recursion."""
    if not rewards:
        raise ValueError("rewards must be nonempty")
    returns = [0.0] * len(rewards)
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + discount * acc
        returns[i] = acc
    return returns


def td_error(return_to_go: float, value: float) -> float:
    return return_to_go - value


def clipped_objective(ratio: float, advantage: float, clip_epsilon: float) -> float:
    """Per-step pessimistic surrogate: ``min(r*A, clip(r)*A)``."""
    if ratio <= 0.0:
        raise ValueError("probability ratio must be positive")
    clipped = min(max(ratio, 1.0 - clip_epsilon), 1.0 + clip_epsilon)
    return min(ratio * advantage, clipped * advantage)


@dataclass
class EpochStats:
    epoch: int
    mean_return: float
    mean_terminal_quality: float | None
    mean_route_length: float
    mean_cost: float
    actor_loss: float | None
    critic_loss: float | None
    flushes: int

    def as_record(self) -> dict:
        return {
            "epoch": self.epoch,
            "mean_return": self.mean_return,
            "mean_terminal_quality": self.mean_terminal_quality,
            "mean_route_length": self.mean_route_length,
            "mean_cost": self.mean_cost,
            "actor_loss": self.actor_loss,
            "critic_loss": self.critic_loss,
            "flushes": self.flushes,
        }


@dataclass
class TrainResult:
    policy: Policy
    log: list[EpochStats]
    converged: bool
    stop_examples: list[tuple[State, float]] = field(default_factory=list)


def train(
    dataset: Sequence[Question],
    env: "RoutingEnv",
    policy: Policy,
    cfg: PpoConfig,
    rng: np.random.Generator,
    *,
    harvest_cap: int = 6000,
    on_episode: Callable[[int, "EpisodeResult"], None] | None = None,
) -> TrainResult:
    """Optimize the policy on a question set.

    One trajectory is collected per question using the old parameter
    snapshots; every time the buffer reaches capacity, ``flush_updates``
    update iterations run over uniformly sampled trajectories (maximizing
    the clipped surrogate, minimizing squared TD error), then the buffer is
    emptied and the snapshots refreshed.  Epochs repeat until the moving
    average of mean return plateaus or ``max_epochs`` is hit.

    Also harvests ``(state-with-answer, quality score)`` pairs along the way
    (reservoir-sampled to ``harvest_cap``) as stop-classifier training data.
    """
    if not dataset:
        raise ValueError("training dataset must be nonempty")
    buffer = ReplayBuffer(cfg.buffer_size)
    actor_opt = AdamOptimizer(lr=cfg.actor_lr)
    critic_opt = AdamOptimizer(lr=cfg.critic_lr)
    policy.snapshot_old()

    log: list[EpochStats] = []
    converged = False
    stop_examples: list[tuple[State, float]] = []
    harvested = 0
    return_history: list[float] = []

    for epoch in range(cfg.max_epochs):
        results: list["EpisodeResult"] = []
        epoch_actor_losses: list[float] = []
        epoch_critic_losses: list[float] = []
        flushes = 0
        for question in dataset:
            result = env.run_episode(
                question, policy, mode="sample", rng=rng,
                use_old=True, discount=cfg.discount,
            )
            results.append(result)
            buffer.add(result.trajectory)
            if on_episode is not None:
                on_episode(epoch, result)
            harvested = _harvest(result, stop_examples, harvest_cap, harvested, rng)
            if buffer.is_full():
                actor_loss, critic_loss = _flush(buffer, policy, cfg, actor_opt, critic_opt, rng)
                epoch_actor_losses.append(actor_loss)
                epoch_critic_losses.append(critic_loss)
                flushes += 1

        stats = _epoch_stats(epoch, results, epoch_actor_losses, epoch_critic_losses, flushes)
        log.append(stats)
        return_history.append(stats.mean_return)
        logger.debug("epoch %d: return=%.4f quality=%s", epoch, stats.mean_return,
                     stats.mean_terminal_quality)
        if _plateaued(return_history, cfg.plateau_window, cfg.plateau_tol):
            converged = True
            break

    # Leftover partial buffers are discarded: updates only ever run on a
    # full buffer, but the exit state must be clean and synchronized.
    buffer.clear()
    policy.snapshot_old()
    return TrainResult(policy=policy, log=log, converged=converged,
                       stop_examples=stop_examples)


def _flush(
    buffer: ReplayBuffer,
    policy: Policy,
    cfg: PpoConfig,
    actor_opt: AdamOptimizer,
    critic_opt: AdamOptimizer,
    rng: np.random.Generator,
) -> tuple[float, float]:
    actor_losses = []
    critic_losses = []
    for _ in range(cfg.flush_updates):
        steps: list[TrajectoryStep] = []
        while len(steps) < cfg.batch_size:
            steps.extend(buffer.sample(rng))
        features = np.stack([policy.features(s.state) for s in steps])
        actions = np.array([s.action.expert_index for s in steps])
        old_log_probs = np.array([s.old_log_prob for s in steps])
        advantages = np.array([s.advantage for s in steps])
        returns = np.array([s.return_to_go for s in steps])

        actor_loss, actor_grads = actor_loss_and_grad(
            policy.params.actor, features, actions, old_log_probs,
            advantages, cfg.clip_epsilon, cfg.entropy_coef,
        )
        actor_opt.update(policy.params.actor, actor_grads)
        critic_loss, critic_grads = critic_loss_and_grad(
            policy.params.critic, features, returns
        )
        critic_opt.update(policy.params.critic, critic_grads)
        if not (math.isfinite(actor_loss) and math.isfinite(critic_loss)):
            raise FloatingPointError("training diverged: non-finite loss")
        actor_losses.append(actor_loss)
        critic_losses.append(critic_loss)
    buffer.clear()
    policy.snapshot_old()
    return float(np.mean(actor_losses)), float(np.mean(critic_losses))


def _harvest(
    result: "EpisodeResult",
    examples: list[tuple[State, float]],
    cap: int,
    seen: int,
    rng: np.random.Generator,
) -> int:
    for k, (answer, score) in enumerate(zip(result.step_answers, result.step_scores)):
        if score is None:
            continue
        item = (State(result.question, answer, k + 1), score)
        seen += 1
        if len(examples) < cap:
            examples.append(item)
        else:
            j = int(rng.integers(seen))
            if j < cap:
                examples[j] = item
    return seen


def _epoch_stats(
    epoch: int,
    results: list["EpisodeResult"],
    actor_losses: list[float],
    critic_losses: list[float],
    flushes: int,
) -> EpochStats:
    qualities = [r.terminal_quality for r in results if r.terminal_quality is not None]
    return EpochStats(
        epoch=epoch,
        mean_return=float(np.mean([sum(s.reward for s in r.trajectory) for r in results])),
        mean_terminal_quality=float(np.mean(qualities)) if qualities else None,
        mean_route_length=float(np.mean([len(r.trajectory) for r in results])),
        mean_cost=float(np.mean([r.total_cost for r in results])),
        actor_loss=float(np.mean(actor_losses)) if actor_losses else None,
        critic_loss=float(np.mean(critic_losses)) if critic_losses else None,
        flushes=flushes,
    )


def _plateaued(history: list[float], window: int, tol: float) -> bool:
    if len(history) < 2 * window:
        return False
    recent = float(np.mean(history[-window:]))
    previous = float(np.mean(history[-2 * window:-window]))
    improvement = recent - previous
    return improvement < tol * max(abs(previous), 1e-8)
