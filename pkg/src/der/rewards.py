"""Quality scoring, the compute-cost model, and the shaped step reward.

The per-step reward is quality minus ``alpha`` times expert cost, plus
``beta`` times the quality increment after the first step.  A terminal
bias of ``+gamma`` is added when quality crosses the stop threshold
``p0`` and ``-gamma`` when the final step still falls short.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Protocol, Sequence

from .types import Answer, Question


@dataclass(frozen=True)
class RewardConfig:
    alpha: float = 0.001
    beta: float = 0.5
    gamma: float = 0.1
    p0: float = 0.73
    t_max: int = 4

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("alpha, beta and gamma must be nonnegative")
        if not 0.0 < self.p0 < 1.0:
            raise ValueError(f"p0 must lie in (0, 1), got {self.p0}")
        if self.t_max < 1:
            raise ValueError("t_max must be at least 1")


class CostModel:
    """Per-expert compute cost, in billions of parameters (or any
    consistent abstract unit)."""

    def __init__(self, costs: Sequence[float]):
        costs = tuple(float(c) for c in costs)
        if not costs:
            raise ValueError("cost model needs at least one expert")
        if any(c <= 0 for c in costs):
            raise ValueError("every expert cost must be positive")
        self._costs = costs

    def __len__(self) -> int:
        return len(self._costs)

    def cost(self, expert_index: int) -> float:
        if not 0 <= expert_index < len(self._costs):
            raise IndexError(
                f"expert index {expert_index} outside pool of {len(self._costs)}"
            )
        return self._costs[expert_index]


def expert_cost(expert_index: int, model: CostModel) -> float:
    return model.cost(expert_index)


class QualityScorer(Protocol):
    """Scores an answer against its question on [0, 1]."""

    def score(self, answer: Answer, question: Question) -> float: ...


class LatentQualityScorer:
    """Reads the hidden quality planted by the synthetic backend."""

    def score(self, answer: Answer, question: Question) -> float:
        if answer.latent_quality is None:
            raise ValueError("answer carries no latent quality; "
                             "use a reference-based scorer instead")
        return _clamp01(answer.latent_quality)


class OverlapScorer:
    """Token-overlap F1 between the answer and the question's reference."""

    def score(self, answer: Answer, question: Question) -> float:
        if question.reference_answer is None:
            raise ValueError(f"question {question.id!r} has no reference answer")
        return overlap_score(answer.text, question.reference_answer)


def overlap_score(answer_text: str, reference_text: str) -> float:
    """F1 over lowercased whitespace-token multisets; 0 when disjoint."""
    if not reference_text:
        raise ValueError("reference text must be nonempty")
    answer_tokens = Counter(answer_text.lower().split())
    reference_tokens = Counter(reference_text.lower().split())
    if not answer_tokens or not reference_tokens:
        return 0.0
    common = sum((answer_tokens & reference_tokens).values())
    if common == 0:
        return 0.0
    precision = common / sum(answer_tokens.values())
    recall = common / sum(reference_tokens.values())
    return 2.0 * precision * recall / (precision + recall)


def step_reward(
    score_t: float,
    score_prev: float | None,
    cost: float,
    t: int,
    cfg: RewardConfig,
) -> float:
    """Shaped reward before the terminal bias; ``t`` is the zero-based step."""
    if not 0.0 <= score_t <= 1.0:
        raise ValueError(f"score must lie in [0, 1], got {score_t}")
    if t > 0 and score_prev is None:
        raise ValueError("steps after the first need the previous score")
    reward = score_t - cfg.alpha * cost
    if t > 0:
        reward += cfg.beta * (score_t - score_prev)
    return reward


def terminal_adjust(reward: float, t: int, score_t: float, cfg: RewardConfig) -> float:
    """Apply the terminal bias.  ``t`` counts answers produced so far, so
    ``t == t_max`` marks the final permitted step."""
    if t > cfg.t_max:
        raise ValueError(f"step count {t} exceeds t_max {cfg.t_max}")
    if score_t >= cfg.p0:
        return reward + cfg.gamma
    if t == cfg.t_max:
        return reward - cfg.gamma
    return reward


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))
