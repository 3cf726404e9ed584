"""Dynamic expert routing: sequential expert selection with knowledge
transfer, trained by clipped proximal policy optimization against a
quality-minus-cost reward."""

from .encoding import Encoder, HashedNgramEncoder
from .environment import EpisodeConfig, EpisodeResult, RoutingEnv, run_episode
from .experts import (
    BENCHMARK_PROFILES,
    ExpertPool,
    ExpertProfile,
    RemoteExpert,
    generate_questions,
    synthetic_answer,
)
from .oracle import evaluate_policy_vs_oracle, optimal_route, route_count
from .policy import Policy, load_policy, save_policy, select_action
from .ppo import PpoConfig, ReplayBuffer, TrajectoryStep, train
from .rewards import (
    CostModel,
    LatentQualityScorer,
    OverlapScorer,
    RewardConfig,
    overlap_score,
    step_reward,
    terminal_adjust,
)
from .router import DerRouter, TerminatorClassifier
from .terminator import TerminatorParams, should_stop, train_terminator
from .types import Action, Answer, Question, Route, State, render_first_prompt, render_ktp, render_state

__version__ = "0.1.0"

__all__ = [
    "Action",
    "Answer",
    "BENCHMARK_PROFILES",
    "CostModel",
    "DerRouter",
    "Encoder",
    "EpisodeConfig",
    "EpisodeResult",
    "ExpertPool",
    "ExpertProfile",
    "HashedNgramEncoder",
    "LatentQualityScorer",
    "OverlapScorer",
    "Policy",
    "PpoConfig",
    "Question",
    "RemoteExpert",
    "ReplayBuffer",
    "RewardConfig",
    "Route",
    "RoutingEnv",
    "State",
    "TerminatorClassifier",
    "TerminatorParams",
    "TrajectoryStep",
    "evaluate_policy_vs_oracle",
    "generate_questions",
    "load_policy",
    "optimal_route",
    "overlap_score",
    "render_first_prompt",
    "render_ktp",
    "render_state",
    "route_count",
    "run_episode",
    "save_policy",
    "select_action",
    "should_stop",
    "step_reward",
    "synthetic_answer",
    "terminal_adjust",
    "train",
    "train_terminator",
]
