from __future__ import annotations

import itertools

import numpy as np
import pytest

from der.environment import EpisodeConfig
from der.experts import ExpertPool, ExpertProfile
from der.oracle import (
    UniformRandomPolicy,
    evaluate_policy_vs_oracle,
    optimal_route,
    route_count,
    route_length_histogram,
)
from der.policy import ActionDistribution
from der.rewards import LatentQualityScorer, RewardConfig, step_reward, terminal_adjust
from der.types import Question


def question(difficulty=0.0, topic=0, qid="q0"):
    return Question(id=qid, text=f"probe {qid}", reference_answer="r e f",
                    topic=topic, difficulty=difficulty)


def cfg_for(t_max=3, p0=0.73):
    return EpisodeConfig(
        reward=RewardConfig(alpha=0.001, beta=0.5, gamma=0.1, p0=p0, t_max=t_max),
        scorer=LatentQualityScorer(),
    )


class TestRouteCount:
    def test_single_expert_single_step(self):
        assert route_count(1, 1) == 1

    def test_eleven_expert_pool(self):
        assert route_count(11, 4) == 16104

    def test_benchmark_scale(self):
        assert route_count(4, 3) == 84

    def test_matches_explicit_enumeration(self):
        for n in range(1, 6):
            for m in range(1, 5):
                explicit = sum(
                    1
                    for k in range(1, m + 1)
                    for _ in itertools.product(range(n), repeat=k)
                )
                assert route_count(n, m) == explicit

    def test_arbitrary_precision(self):
        assert route_count(100, 10) == sum(100**k for k in range(1, 11))

    def test_invalid_arguments_rejected(self):
        with pytest.raises(ValueError):
            route_count(0, 1)


def profile(name, skill, eta=0.0, cost=5.0):
    return ExpertProfile(name, skills=(skill,), transfer_efficiency=eta, cost=cost)


class TestOptimalRoute:
    def test_single_expert_single_step(self):
        pool = ExpertPool([profile("only", 0.5)])
        result = optimal_route(question(), pool, cfg_for(t_max=1))
        assert result.route.expert_indices() == (0,)

    def test_threshold_stop_dominates(self):
        # Both experts clear p0, so every route stops after one step and
        # the higher-quality expert wins.
        pool = ExpertPool([profile("good", 0.9), profile("meh", 0.74)])
        result = optimal_route(question(), pool, cfg_for())
        assert result.route.expert_indices() == (0,)
        assert result.terminal_quality == pytest.approx(0.9)

    def test_complementary_pair_needs_two_steps(self):
        # Neither expert clears p0 alone; expert 1 after expert 0 does.
        pool = ExpertPool([
            profile("opener", 0.6, eta=0.0),
            profile("closer", 0.5, eta=0.9),
        ])
        result = optimal_route(question(), pool, cfg_for(t_max=2))
        assert len(result.route.steps) == 2
        assert result.route.expert_indices() == (0, 1)
        assert result.terminal_quality == pytest.approx(0.5 + 0.9 * 0.6 * 0.5)
        assert result.terminal_quality >= 0.73

    def test_cumulative_reward_favors_filling_the_budget(self):
        # Quality is paid every step, so below-threshold steps add reward:
        # with room in the budget the reward-optimal route is longer than
        # the earliest possible crossing.
        pool = ExpertPool([
            profile("opener", 0.6, eta=0.0),
            profile("closer", 0.5, eta=0.9),
        ])
        result = optimal_route(question(), pool, cfg_for(t_max=3))
        assert len(result.route.steps) == 3
        assert result.terminal_quality >= 0.73

    def test_quality_only_ties_break_to_shortest_route(self):
        # With transfer disabled every route ending in expert 0 ties at its
        # solo quality, so the single-step route wins the tie-break.
        pool = ExpertPool([
            profile("direct", 0.74, eta=0.0),
            profile("stall", 0.5, eta=0.0),
        ])
        result = optimal_route(question(), pool, cfg_for(t_max=3), quality_only=True)
        assert result.route.expert_indices() == (0,)
        assert result.terminal_quality == pytest.approx(0.74)

    def test_invariant_under_pool_permutation(self):
        experts = [
            profile("a", 0.55, eta=0.2, cost=8.0),
            profile("b", 0.45, eta=0.7, cost=4.0),
            profile("c", 0.35, eta=0.9, cost=2.0),
        ]
        cfg = cfg_for()
        q = question(difficulty=0.25)
        base = optimal_route(q, ExpertPool(experts), cfg)
        permuted = optimal_route(q, ExpertPool(experts[::-1]), cfg)
        assert permuted.utility == pytest.approx(base.utility, abs=1e-12)
        assert permuted.terminal_quality == pytest.approx(base.terminal_quality, abs=1e-12)
        relabeled = tuple(2 - i for i in permuted.route.expert_indices())
        assert relabeled == base.route.expert_indices()

    def test_lexicographic_tie_break(self):
        # Identical twins: every route has a same-utility mirror, so the
        # all-zeros route must win.
        pool = ExpertPool([
            profile("twin-a", 0.5, eta=0.2),
            profile("twin-b", 0.5, eta=0.2),
        ])
        result = optimal_route(question(), pool, cfg_for(t_max=2))
        assert result.route.expert_indices() == (0, 0)

    def test_stochastic_pool_rejected(self):
        noisy = ExpertProfile("n", skills=(0.5,), transfer_efficiency=0.2,
                              cost=1.0, noise_sigma=0.1)
        with pytest.raises(ValueError):
            optimal_route(question(), ExpertPool([noisy]), cfg_for())

    def test_enumeration_guard(self):
        pool = ExpertPool([profile(f"e{i}", 0.01) for i in range(8)])
        with pytest.raises(ValueError):
            optimal_route(question(), pool, cfg_for(t_max=7))

    def test_utility_dominates_rescored_random_routes(self):
        pool = ExpertPool([
            profile("a", 0.55, eta=0.2, cost=8.0),
            profile("b", 0.45, eta=0.7, cost=4.0),
            profile("c", 0.35, eta=0.9, cost=2.0),
        ])
        cfg = cfg_for()
        q = question(difficulty=0.2)
        best = optimal_route(q, pool, cfg)
        rng = np.random.default_rng(0)
        for _ in range(100):
            utility = _walk_random_route(q, pool, cfg, rng)
            assert utility <= best.utility + 1e-12

    def test_quality_only_flag_targets_quality(self):
        # Cheap expert crosses p0 in one step; expensive chain ends higher.
        pool = ExpertPool([
            profile("fast", 0.74, eta=0.0, cost=1.0),
            profile("deep", 0.72, eta=0.9, cost=20.0),
        ])
        cfg = cfg_for()
        by_reward = optimal_route(question(), pool, cfg)
        by_quality = optimal_route(question(), pool, cfg, quality_only=True)
        assert by_quality.terminal_quality >= by_reward.terminal_quality


def _walk_random_route(q, pool, cfg, rng):
    """Independent episode walker used to re-score random routes."""
    prev_answer = None
    prev_score = None
    total = 0.0
    model = pool.cost_model()
    for depth in range(cfg.t_max):
        index = int(rng.integers(len(pool)))
        answer = pool.invoke(index, "", q, prev_answer, None)
        score = cfg.scorer.score(answer, q)
        reward = step_reward(score, prev_score, model.cost(index), depth, cfg.reward)
        reward = terminal_adjust(reward, depth + 1, score, cfg.reward)
        total += reward
        if score >= cfg.reward.p0:
            break
        prev_answer, prev_score = answer, score
    return total


class ReplayPolicy:
    """Replays a fixed route per question id; used to pin the ratio at 1."""

    def __init__(self, routes: dict[str, tuple[int, ...]], n_experts: int):
        self.routes = routes
        self.n_experts = n_experts
        self.encoder = None

    def action_distribution(self, state, *, old=False):
        probs = np.zeros(self.n_experts)
        probs[self.routes[state.question.id][state.step]] = 1.0
        return ActionDistribution(probs)

    def value_estimate(self, state, *, old=False):
        return 0.0


class TestEvaluate:
    def make_pool(self):
        return ExpertPool([
            ExpertProfile("a", skills=(0.9, 0.3), transfer_efficiency=0.3, cost=9.0),
            ExpertProfile("b", skills=(0.3, 0.9), transfer_efficiency=0.3, cost=7.0),
            ExpertProfile("c", skills=(0.5, 0.5), transfer_efficiency=0.8, cost=3.0),
        ])

    def make_questions(self):
        rng = np.random.default_rng(1)
        return [
            question(difficulty=float(rng.uniform(0, 0.4)),
                     topic=int(rng.integers(2)), qid=f"e{i}")
            for i in range(12)
        ]

    def test_oracle_replay_scores_ratio_one(self):
        pool = self.make_pool()
        cfg = cfg_for()
        questions = self.make_questions()
        routes = {
            q.id: optimal_route(q, pool, cfg).route.expert_indices()
            for q in questions
        }
        replay = ReplayPolicy(routes, len(pool))
        report = evaluate_policy_vs_oracle(
            questions, replay, pool, cfg, np.random.default_rng(0), n_random=1
        )
        assert report["summary"]["policy_vs_oracle"] == pytest.approx(1.0)

    def test_random_never_beats_quality_oracle(self):
        pool = self.make_pool()
        cfg = cfg_for()
        questions = self.make_questions()
        report = evaluate_policy_vs_oracle(
            questions, UniformRandomPolicy(len(pool)), pool, cfg,
            np.random.default_rng(3), n_random=2, quality_only=True,
        )
        for row in report["rows"]:
            assert row["random_quality"] <= row["oracle_quality"] + 1e-12

    def test_histogram_percentages_sum_to_hundred(self):
        pool = self.make_pool()
        cfg = cfg_for()
        report = evaluate_policy_vs_oracle(
            self.make_questions(), UniformRandomPolicy(len(pool)), pool, cfg,
            np.random.default_rng(4), n_random=1,
        )
        histogram = report["summary"]["route_length_histogram"]
        assert sum(histogram.values()) == pytest.approx(100.0, abs=0.1)

    def test_parallel_jobs_match_serial(self):
        pool = self.make_pool()
        cfg = cfg_for()
        questions = self.make_questions()
        serial = evaluate_policy_vs_oracle(
            questions, UniformRandomPolicy(len(pool)), pool, cfg,
            np.random.default_rng(5), n_random=2, jobs=1,
        )
        parallel = evaluate_policy_vs_oracle(
            questions, UniformRandomPolicy(len(pool)), pool, cfg,
            np.random.default_rng(5), n_random=2, jobs=4,
        )
        assert serial["summary"] == parallel["summary"]

    def test_empty_question_list_rejected(self):
        pool = self.make_pool()
        with pytest.raises(ValueError):
            evaluate_policy_vs_oracle([], UniformRandomPolicy(3), pool, cfg_for(),
                                      np.random.default_rng(0))

    def test_histogram_helper(self):
        histogram = route_length_histogram([1, 1, 2, 3], 4)
        assert histogram == {"T=1": 50.0, "T=2": 25.0, "T=3": 25.0, "T=4": 0.0}
