"""Brute-force ground truth for small deterministic instances.

Enumerates every realizable route (mirroring the environment's threshold
termination) to find the one maximizing cumulative shaped reward, counts
route combinatorics exactly, and compares a trained policy against the
optimum and against uniform-random routing.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .environment import EpisodeConfig, EpisodeResult, run_episode
from .experts import ExpertPool
from .policy import ActionDistribution
from .rewards import step_reward, terminal_adjust
from .types import Action, Answer, Question, Route

ENUMERATION_GUARD = 1_000_000


def route_count(n_experts: int, max_len: int) -> int:
    """Number of distinct expert sequences of length 1..max_len."""
    if n_experts < 1 or max_len < 1:
        raise ValueError("need at least one expert and one step")
    return sum(n_experts**k for k in range(1, max_len + 1))


@dataclass(frozen=True)
class OracleResult:
    route: Route
    terminal_quality: float
    utility: float
    total_cost: float


def optimal_route(
    question: Question,
    pool: ExpertPool,
    cfg: EpisodeConfig,
    *,
    quality_only: bool = False,
) -> OracleResult:
    """Exhaustively search for the best route on a deterministic pool.

    Utility is the cumulative shaped reward the agent would see (or the
    terminal quality with ``quality_only``).  Ties prefer shorter routes,
    then lexicographically smaller action sequences.
    """
    if not pool.is_deterministic():
        raise ValueError("oracle search needs a noise-free synthetic pool")
    if cfg.scorer is None:
        raise ValueError("oracle search needs a quality scorer")
    if route_count(len(pool), cfg.t_max) > ENUMERATION_GUARD:
        raise ValueError(
            f"route space exceeds the enumeration guard of {ENUMERATION_GUARD}"
        )

    best: tuple[float, int, tuple[int, ...], Answer, float, float] | None = None
    cost_model = pool.cost_model()
    reward_cfg = cfg.reward

    def search(
        depth: int,
        prev_answer: Answer | None,
        prev_score: float | None,
        acc_reward: float,
        acc_cost: float,
        actions: tuple[int, ...],
    ) -> None:
        nonlocal best
        for index in range(len(pool)):
            answer = pool.invoke(index, "", question, prev_answer, None)
            score = cfg.scorer.score(answer, question)
            cost = cost_model.cost(index)
            reward = step_reward(score, prev_score, cost, depth, reward_cfg)
            reward = terminal_adjust(reward, depth + 1, score, reward_cfg)
            total_reward = acc_reward + reward
            total_cost = acc_cost + cost
            route = actions + (index,)
            done = score >= reward_cfg.p0 or depth + 1 == cfg.t_max
            if done:
                utility = score if quality_only else total_reward
                candidate = (utility, len(route), route, answer, score, total_cost)
                if best is None or _better(candidate, best):
                    best = candidate
            else:
                search(depth + 1, answer, score, total_reward, total_cost, route)

    search(0, None, None, 0.0, 0.0, ())
    assert best is not None
    utility, _, actions, answer, score, total_cost = best
    return OracleResult(
        route=Route(tuple(Action(i) for i in actions), answer),
        terminal_quality=score,
        utility=utility,
        total_cost=total_cost,
    )


def _better(candidate: tuple, incumbent: tuple) -> bool:
    if candidate[0] != incumbent[0]:
        return candidate[0] > incumbent[0]
    if candidate[1] != incumbent[1]:
        return candidate[1] < incumbent[1]
    return candidate[2] < incumbent[2]


class UniformRandomPolicy:
    """Baseline policy: every expert equally likely, zero value estimates."""

    def __init__(self, n_experts: int):
        self.n_experts = n_experts
        self.encoder = None

    def action_distribution(self, state, *, old: bool = False) -> ActionDistribution:
        return ActionDistribution(np.full(self.n_experts, 1.0 / self.n_experts))

    def value_estimate(self, state, *, old: bool = False) -> float:
        return 0.0


def evaluate_policy_vs_oracle(
    questions: list[Question],
    policy,
    pool: ExpertPool,
    cfg: EpisodeConfig,
    rng: np.random.Generator,
    *,
    n_random: int = 3,
    quality_only: bool = False,
    jobs: int = 1,
) -> dict:
    """Per-question and aggregate comparison of policy, optimum and random.

    Returns a report with one row per question plus a summary block holding
    mean qualities, costs, route lengths, the policy/oracle and
    policy/random quality ratios, and the policy route-length histogram.
    """
    if not questions:
        raise ValueError("evaluation needs at least one question")
    random_policy = UniformRandomPolicy(len(pool))
    child_rngs = rng.spawn(len(questions))

    def evaluate_one(question: Question, child: np.random.Generator) -> dict:
        oracle = optimal_route(question, pool, cfg, quality_only=quality_only)
        policy_result = run_episode(question, policy, pool, cfg, mode="greedy")
        random_qualities = []
        random_costs = []
        for _ in range(n_random):
            random_result = run_episode(
                question, random_policy, pool, cfg, mode="sample", rng=child
            )
            random_qualities.append(random_result.terminal_quality)
            random_costs.append(random_result.total_cost)
        return {
            "question_id": question.id,
            "oracle_quality": oracle.terminal_quality,
            "oracle_utility": oracle.utility,
            "oracle_cost": oracle.total_cost,
            "oracle_route": list(oracle.route.expert_indices()),
            "policy_quality": policy_result.terminal_quality,
            "policy_return": policy_result.total_return,
            "policy_cost": policy_result.total_cost,
            "policy_route": list(policy_result.route.expert_indices()),
            "random_quality": float(np.mean(random_qualities)),
            "random_cost": float(np.mean(random_costs)),
        }

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool_exec:
            rows = list(pool_exec.map(evaluate_one, questions, child_rngs))
    else:
        rows = [evaluate_one(q, child) for q, child in zip(questions, child_rngs)]

    lengths = [len(r["policy_route"]) for r in rows]
    summary = {
        "n_questions": len(rows),
        "mean_oracle_quality": float(np.mean([r["oracle_quality"] for r in rows])),
        "mean_policy_quality": float(np.mean([r["policy_quality"] for r in rows])),
        "mean_random_quality": float(np.mean([r["random_quality"] for r in rows])),
        "mean_oracle_cost": float(np.mean([r["oracle_cost"] for r in rows])),
        "mean_policy_cost": float(np.mean([r["policy_cost"] for r in rows])),
        "mean_random_cost": float(np.mean([r["random_cost"] for r in rows])),
        "mean_policy_route_length": float(np.mean(lengths)),
        "route_length_histogram": route_length_histogram(lengths, cfg.t_max),
    }
    oracle_mean = summary["mean_oracle_quality"]
    random_mean = summary["mean_random_quality"]
    summary["policy_vs_oracle"] = (
        summary["mean_policy_quality"] / oracle_mean if oracle_mean else float("nan")
    )
    summary["policy_vs_random"] = (
        summary["mean_policy_quality"] / random_mean if random_mean else float("nan")
    )
    return {"rows": rows, "summary": summary}


def route_length_histogram(lengths: list[int], t_max: int) -> dict[str, float]:
    """Percentage of routes at each length 1..t_max."""
    total = len(lengths)
    return {
        f"T={k}": 100.0 * sum(1 for n in lengths if n == k) / total
        for k in range(1, t_max + 1)
    }


def policy_results(
    questions: list[Question],
    policy,
    pool: ExpertPool,
    cfg: EpisodeConfig,
    *,
    mode: str = "greedy",
    rng: np.random.Generator | None = None,
) -> list[EpisodeResult]:
    """Convenience rollout of a policy over a question list."""
    return [run_episode(q, policy, pool, cfg, mode=mode, rng=rng) for q in questions]
