from __future__ import annotations

import numpy as np
import pytest

from der.encoding import HashedNgramEncoder
from der.environment import EpisodeConfig
from der.experts import ExpertPool, ExpertProfile, generate_questions
from der.rewards import LatentQualityScorer, RewardConfig
from der.types import Question


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def encoder():
    return HashedNgramEncoder(dim=256)


@pytest.fixture
def synthetic_question():
    return Question(
        id="q0",
        text="algebra question q0: explain the algebra case 0 step by step",
        reference_answer="algebra summary case0 " + " ".join(f"point{j}-0" for j in range(9)),
        topic=0,
        difficulty=0.2,
    )


@pytest.fixture
def two_expert_pool():
    """Expert 0 dominates expert 1 on every topic."""
    return ExpertPool([
        ExpertProfile("strong", skills=(0.9, 0.9), transfer_efficiency=0.3, cost=10.0),
        ExpertProfile("weak", skills=(0.1, 0.1), transfer_efficiency=0.3, cost=5.0),
    ])


@pytest.fixture
def oracle_cfg():
    return EpisodeConfig(
        reward=RewardConfig(alpha=0.001, beta=0.5, gamma=0.1, p0=0.73, t_max=3),
        scorer=LatentQualityScorer(),
        termination="oracle",
    )


@pytest.fixture
def benchmark_questions():
    return generate_questions(24, seed=5)
