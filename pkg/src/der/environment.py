"""The routing environment: transition, termination, and the episode runner.

An episode starts from the bare question.  Each step the policy picks an
expert, the environment builds the prompt (raw question first, knowledge
transfer prompt afterwards), invokes the expert, and scores the answer.
Episodes stop when the quality check fires or the step budget runs out.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterator

import numpy as np

from .experts import ExpertPool
from .policy import Policy, select_action
from .ppo import TrajectoryStep, compute_returns
from .rewards import QualityScorer, RewardConfig, step_reward, terminal_adjust
from .terminator import TerminatorParams, should_stop
from .types import (
    Action,
    Answer,
    Question,
    Route,
    State,
    render_first_prompt,
    render_ktp,
)

TERMINATION_MODES = ("oracle", "terminator", "none")


@dataclass(frozen=True)
class EpisodeConfig:
    """How episodes are scored and when they stop.

    ``termination="oracle"`` stops once the true score reaches ``p0``
    (training); ``"terminator"`` defers to the trained stop classifier
    (evaluation); ``"none"`` always runs to the step budget.
    """

    reward: RewardConfig
    scorer: QualityScorer | None
    termination: str = "oracle"
    terminator: TerminatorParams | None = None

    def __post_init__(self) -> None:
        if self.termination not in TERMINATION_MODES:
            raise ValueError(f"termination must be one of {TERMINATION_MODES}")
        if self.termination == "oracle" and self.scorer is None:
            raise ValueError("oracle termination needs a quality scorer")
        if self.termination == "terminator" and self.terminator is None:
            raise ValueError("terminator termination needs trained parameters")

    @property
    def t_max(self) -> int:
        return self.reward.t_max


@dataclass(frozen=True)
class EpisodeResult:
    question: Question
    trajectory: tuple[TrajectoryStep, ...]
    route: Route
    terminal_quality: float | None
    total_cost: float
    terminated_by: str  # "threshold" | "max_steps"
    step_answers: tuple[Answer, ...]
    step_scores: tuple[float | None, ...]

    def __post_init__(self) -> None:
        if not 1 <= len(self.trajectory):
            raise ValueError("trajectory must contain at least one step")
        if self.terminated_by not in ("threshold", "max_steps"):
            raise ValueError(f"unknown termination cause {self.terminated_by!r}")

    @property
    def route_length(self) -> int:
        return len(self.route.steps)

    @property
    def total_return(self) -> float:
        return sum(s.reward for s in self.trajectory)


def check_termination(state: State, cfg: EpisodeConfig, encoder=None) -> bool:
    """Decide whether the answer in ``state`` is good enough to stop."""
    if state.answer is None:
        raise ValueError("termination check needs a state with an answer")
    if cfg.termination == "oracle":
        return cfg.scorer.score(state.answer, state.question) >= cfg.reward.p0
    if cfg.termination == "terminator":
        if encoder is None:
            raise ValueError("terminator check needs the feature encoder")
        return should_stop(state, cfg.terminator, encoder)
    return False


def step(
    state: State,
    action: Action,
    pool: ExpertPool,
    cfg: EpisodeConfig,
    rng: np.random.Generator | None = None,
    encoder=None,
) -> tuple[State, Answer, bool, str | None]:
    """Apply one transition: prompt the chosen expert and advance the state."""
    if state.step >= cfg.t_max:
        raise ValueError(f"state is already at the step budget {cfg.t_max}")
    if not 0 <= action.expert_index < len(pool):
        raise ValueError(
            f"action {action.expert_index} invalid for pool of {len(pool)}"
        )
    if state.answer is None:
        prompt = render_first_prompt(state.question)
    else:
        prompt = render_ktp(state.question, state.answer)
    answer = pool.invoke(action.expert_index, prompt, state.question, state.answer, rng)
    next_state = State(state.question, answer, state.step + 1)

    terminated_by: str | None = None
    if check_termination(next_state, cfg, encoder):
        terminated_by = "threshold"
    elif next_state.step == cfg.t_max:
        terminated_by = "max_steps"
    return next_state, answer, terminated_by is not None, terminated_by


def run_episode(
    question: Question,
    policy: Policy,
    pool: ExpertPool,
    cfg: EpisodeConfig,
    mode: str = "greedy",
    rng: np.random.Generator | None = None,
    *,
    use_old: bool = False,
    discount: float = 1.0,
) -> EpisodeResult:
    """Roll out one full episode and record every decision step.

    With ``use_old=True`` the old parameter snapshots drive both action
    selection and value estimates, as required while collecting training
    trajectories.  Rewards are computed whenever the scorer can score the
    answer; otherwise reward fields are zero and scores are None.
    """
    state = State(question)
    raw: list[tuple[State, Action, float, float, float]] = []
    answers: list[Answer] = []
    scores: list[float | None] = []
    rewards: list[float] = []
    prev_score: float | None = None
    total_cost = 0.0
    cost_model = pool.cost_model()
    terminated_by = "max_steps"

    while True:
        dist = policy.action_distribution(state, old=use_old)
        action = select_action(dist, mode, rng)
        value = policy.value_estimate(state, old=use_old)
        log_prob = math.log(float(dist.probs[action.expert_index]))
        next_state, answer, done, cause = step(state, action, pool, cfg, rng,
                                               encoder=policy.encoder)
        cost = cost_model.cost(action.expert_index)
        total_cost += cost
        score = _maybe_score(cfg.scorer, answer, question)
        if score is not None:
            reward = step_reward(score, prev_score, cost, state.step, cfg.reward)
            reward = terminal_adjust(reward, state.step + 1, score, cfg.reward)
        else:
            reward = 0.0
        raw.append((state, action, reward, value, log_prob))
        answers.append(answer)
        scores.append(score)
        rewards.append(reward)
        if done:
            terminated_by = cause
            break
        state = next_state
        prev_score = score

    returns = compute_returns(rewards, discount)
    trajectory = tuple(
        TrajectoryStep(
            state=s, action=a, reward=r, value=v, old_log_prob=lp,
            advantage=r - v, return_to_go=g,
        )
        for (s, a, r, v, lp), g in zip(raw, returns)
    )
    route = Route(steps=tuple(s.action for s in trajectory), terminal_answer=answers[-1])
    return EpisodeResult(
        question=question,
        trajectory=trajectory,
        route=route,
        terminal_quality=scores[-1],
        total_cost=total_cost,
        terminated_by=terminated_by,
        step_answers=tuple(answers),
        step_scores=tuple(scores),
    )


def _maybe_score(scorer: QualityScorer | None, answer: Answer,
                 question: Question) -> float | None:
    """Score when the scorer can handle the answer; None otherwise.

    In oracle termination mode an unscorable answer already raises inside
    check_termination, so swallowing ValueError here only affects the
    terminator/none modes, where scores are reporting-only.
    """
    if scorer is None:
        return None
    try:
        return scorer.score(answer, question)
    except ValueError:
        return None


@dataclass(frozen=True)
class RoutingEnv:
    """An expert pool plus episode configuration, bundled for training."""

    pool: ExpertPool
    cfg: EpisodeConfig

    def run_episode(
        self,
        question: Question,
        policy: Policy,
        mode: str = "greedy",
        rng: np.random.Generator | None = None,
        *,
        use_old: bool = False,
        discount: float = 1.0,
    ) -> EpisodeResult:
        return run_episode(question, policy, self.pool, self.cfg, mode, rng,
                           use_old=use_old, discount=discount)


def trace_records(result: EpisodeResult, pool: ExpertPool) -> Iterator[dict]:
    """Line-delimited trace rows for one episode."""
    n = len(result.trajectory)
    for k, (ts, answer, score) in enumerate(
        zip(result.trajectory, result.step_answers, result.step_scores)
    ):
        if ts.state.answer is None:
            prompt = render_first_prompt(result.question)
        else:
            prompt = render_ktp(result.question, ts.state.answer)
        yield {
            "question_id": result.question.id,
            "step": k,
            "expert_index": ts.action.expert_index,
            "expert_name": pool.names[ts.action.expert_index],
            "prompt_sha256": hashlib.sha256(prompt.encode("utf-8")).hexdigest(),
            "answer": answer.text,
            "score": score,
            "reward": ts.reward,
            "done": k == n - 1,
        }


def write_trace(path: str | Path | IO[str], results: list[EpisodeResult],
                pool: ExpertPool) -> None:
    if hasattr(path, "write"):
        _write_trace(path, results, pool)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            _write_trace(fh, results, pool)


def _write_trace(fh: IO[str], results: list[EpisodeResult], pool: ExpertPool) -> None:
    for result in results:
        for record in trace_records(result, pool):
            fh.write(json.dumps(record) + "\n")
