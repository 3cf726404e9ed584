"""Estimator-style facade so the router composes with the wider ecosystem.

``DerRouter`` exposes the familiar fit/predict surface: ``fit`` learns the
routing policy over a question set, ``predict`` routes new questions and
returns the terminal answers.  ``TerminatorClassifier`` wraps the stop
classifier the same way.  Both inherit scikit-learn's parameter handling
(``get_params``/``set_params``) for grid searches and cloning.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .encoding import HashedNgramEncoder
from .environment import EpisodeConfig, EpisodeResult, RoutingEnv, run_episode
from .experts import ExpertPool, ExpertProfile, RemoteExpert
from .policy import Policy
from .ppo import PpoConfig, train
from .rewards import LatentQualityScorer, OverlapScorer, RewardConfig
from .terminator import TerminatorParams, TerminatorTrainConfig, train_terminator
from .types import Question, State


def coerce_question(item, index: int = 0) -> Question:
    """Accept Question objects, dicts in dataset-record form, or bare text."""
    if isinstance(item, Question):
        return item
    if isinstance(item, dict):
        return Question(
            id=str(item.get("id", index)),
            text=item["question"] if "question" in item else item["text"],
            reference_answer=item.get("reference"),
            topic=item.get("topic"),
            difficulty=item.get("difficulty"),
        )
    if isinstance(item, str):
        return Question(id=str(index), text=item)
    raise TypeError(f"cannot interpret {type(item).__name__} as a question")


def coerce_questions(items: Iterable) -> list[Question]:
    return [coerce_question(item, i) for i, item in enumerate(items)]


class DerRouter(BaseEstimator):
    """Learned cost-aware routing over a pool of expert answerers.

    Parameters mirror the underlying configs; pass ``experts`` as a list of
    ``ExpertProfile``/``RemoteExpert``.  After ``fit``, ``policy_`` holds the
    trained agent, ``terminator_`` the stop classifier (when trainable), and
    ``log_`` the per-epoch training records.
    """

    def __init__(
        self,
        experts: Sequence[ExpertProfile | RemoteExpert] | None = None,
        reward: RewardConfig | None = None,
        ppo: PpoConfig | None = None,
        scorer: str = "latent",
        encoder_dim: int = 1024,
        hidden: int = 128,
        seed: int = 0,
        train_terminator_head: bool = True,
    ):
        self.experts = experts
        self.reward = reward
        self.ppo = ppo
        self.scorer = scorer
        self.encoder_dim = encoder_dim
        self.hidden = hidden
        self.seed = seed
        self.train_terminator_head = train_terminator_head

    def _pool(self) -> ExpertPool:
        if not self.experts:
            raise ValueError("DerRouter needs a nonempty expert pool")
        return ExpertPool(self.experts)

    def _scorer(self):
        if self.scorer == "latent":
            return LatentQualityScorer()
        if self.scorer == "overlap":
            return OverlapScorer()
        raise ValueError(f"unknown scorer {self.scorer!r}")

    def fit(self, X: Iterable, y=None) -> "DerRouter":
        """Train the routing policy on questions (must carry references or
        synthetic metadata so training-time scoring works)."""
        questions = coerce_questions(X)
        pool = self._pool()
        reward = self.reward or RewardConfig()
        ppo_cfg = self.ppo or PpoConfig()
        encoder = HashedNgramEncoder(dim=self.encoder_dim)
        policy = Policy(encoder, n_experts=len(pool), hidden=self.hidden, seed=self.seed)
        env = RoutingEnv(pool, EpisodeConfig(reward=reward, scorer=self._scorer()))
        rng = np.random.default_rng(self.seed)
        result = train(questions, env, policy, ppo_cfg, rng)

        self.pool_ = pool
        self.reward_ = reward
        self.policy_ = result.policy
        self.log_ = result.log
        self.converged_ = result.converged
        self.stop_examples_ = result.stop_examples
        self.terminator_ = None
        if self.train_terminator_head:
            labeled = [(s, score >= reward.p0) for s, score in result.stop_examples]
            if labeled and any(lbl for _, lbl in labeled) and not all(lbl for _, lbl in labeled):
                self.terminator_, self.terminator_accuracy_ = train_terminator(
                    labeled, encoder, TerminatorTrainConfig(seed=self.seed)
                )
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "policy_"):
            raise NotFittedError("DerRouter is not fitted; call fit first")

    def _episode_cfg(self, termination: str) -> EpisodeConfig:
        if termination == "terminator" and self.terminator_ is None:
            raise ValueError("no trained terminator available")
        return EpisodeConfig(
            reward=self.reward_,
            scorer=self._scorer(),
            termination=termination,
            terminator=self.terminator_ if termination == "terminator" else None,
        )

    def route(self, question, termination: str = "oracle",
              mode: str = "greedy",
              rng: np.random.Generator | None = None) -> EpisodeResult:
        """Run one routing episode and return the full result."""
        self._check_fitted()
        q = coerce_question(question)
        return run_episode(q, self.policy_, self.pool_,
                           self._episode_cfg(termination), mode=mode, rng=rng)

    def predict(self, X: Iterable, termination: str = "oracle") -> list[str]:
        """Route each question greedily; returns the terminal answer texts."""
        self._check_fitted()
        return [self.route(q, termination).route.terminal_answer.text
                for q in coerce_questions(X)]

    def score(self, X: Iterable, y=None) -> float:
        """Mean terminal quality over the given questions."""
        self._check_fitted()
        qualities = [self.route(q).terminal_quality for q in coerce_questions(X)]
        if any(q is None for q in qualities):
            raise ValueError("scoring needs scoreable questions")
        return float(np.mean(qualities))


class TerminatorClassifier(BaseEstimator):
    """Stop/continue classifier over answer-bearing states."""

    def __init__(self, encoder_dim: int = 1024, threshold: float = 0.5,
                 lr: float = 0.5, epochs: int = 300, l2: float = 1e-4,
                 holdout_fraction: float = 0.2, seed: int = 0):
        self.encoder_dim = encoder_dim
        self.threshold = threshold
        self.lr = lr
        self.epochs = epochs
        self.l2 = l2
        self.holdout_fraction = holdout_fraction
        self.seed = seed

    def fit(self, X: Sequence[State], y: Sequence[bool]) -> "TerminatorClassifier":
        if len(X) != len(y):
            raise ValueError("X and y must have matching lengths")
        encoder = HashedNgramEncoder(dim=self.encoder_dim)
        cfg = TerminatorTrainConfig(
            lr=self.lr, epochs=self.epochs, l2=self.l2,
            holdout_fraction=self.holdout_fraction,
            threshold=self.threshold, seed=self.seed,
        )
        self.params_, self.holdout_accuracy_ = train_terminator(
            list(zip(X, y)), encoder, cfg
        )
        self.encoder_ = encoder
        return self

    def predict(self, X: Sequence[State]) -> np.ndarray:
        if not hasattr(self, "params_"):
            raise NotFittedError("TerminatorClassifier is not fitted")
        from .terminator import should_stop

        return np.array([should_stop(s, self.params_, self.encoder_) for s in X])

    def score(self, X: Sequence[State], y: Sequence[bool]) -> float:
        predictions = self.predict(X)
        return float(np.mean(predictions == np.asarray(y, dtype=bool)))


__all__ = [
    "DerRouter",
    "TerminatorClassifier",
    "TerminatorParams",
    "coerce_question",
    "coerce_questions",
]
