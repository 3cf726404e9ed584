"""Expert backends: a deterministic synthetic simulator and a remote
chat-completion client.

Synthetic experts answer from a per-topic skill vector with a transfer
law that lets a good previous answer lift the next one, which makes
exhaustive route oracles possible.  Remote experts speak the common
chat-completions JSON shape over HTTP with bearer-token auth.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import requests

from .rewards import CostModel
from .types import Answer, Question

API_KEY_ENV = "DER_API_KEY"


class BackendError(Exception):
    """An expert backend failed; carries the expert name (and, once the
    pool has dispatched it, the expert index)."""

    def __init__(self, expert: str, message: str):
        super().__init__(f"expert {expert!r}: {message}")
        self.expert = expert
        self.expert_index: int | None = None


class RemoteTimeoutError(BackendError):
    pass


class RemoteNetworkError(BackendError):
    pass


class RemoteStatusError(BackendError):
    def __init__(self, expert: str, status: int, body: str):
        super().__init__(expert, f"HTTP {status}: {body[:200]}")
        self.status = status


class RemoteProtocolError(BackendError):
    """The response was not a well-formed chat completion."""


@dataclass(frozen=True)
class ExpertProfile:
    """A scripted answerer: per-topic skill, transfer efficiency, cost."""

    name: str
    skills: tuple[float, ...]
    transfer_efficiency: float
    cost: float
    noise_sigma: float = 0.0

    def __post_init__(self) -> None:
        if not self.skills:
            raise ValueError("profile needs at least one topic skill")
        if any(not 0.0 <= s <= 1.0 for s in self.skills):
            raise ValueError("skills must lie in [0, 1]")
        if not 0.0 <= self.transfer_efficiency <= 1.0:
            raise ValueError("transfer_efficiency must lie in [0, 1]")
        if self.cost <= 0:
            raise ValueError("cost must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")


def synthetic_answer(
    profile: ExpertProfile,
    question: Question,
    prev_quality: float | None,
    rng: np.random.Generator | None,
    *,
    producer: int = 0,
) -> Answer:
    """Simulate one expert call.

    Solo quality is ``skill[topic] * (1 - difficulty)`` plus optional noise;
    a previous answer of quality ``p`` lifts it to
    ``solo + eta * p * (1 - solo)``.  The answer text embeds the expert name
    and a coarse quality tag, then a quality-proportional prefix of the
    reference answer so token-overlap scoring tracks the latent quality.
    """
    if question.topic is None or question.difficulty is None:
        raise ValueError(f"question {question.id!r} lacks topic/difficulty; "
                         "synthetic experts need both")
    if not 0 <= question.topic < len(profile.skills):
        raise ValueError(f"topic {question.topic} outside skill vector "
                         f"of {profile.name!r}")
    solo = profile.skills[question.topic] * (1.0 - question.difficulty)
    if profile.noise_sigma > 0.0:
        if rng is None:
            raise ValueError("noisy profiles need a random generator")
        solo += profile.noise_sigma * rng.normal()
    solo = min(1.0, max(0.0, solo))
    if prev_quality is None:
        quality = solo
    else:
        if not 0.0 <= prev_quality <= 1.0:
            raise ValueError("prev_quality must lie in [0, 1]")
        quality = solo + profile.transfer_efficiency * prev_quality * (1.0 - solo)
    quality = min(1.0, max(0.0, quality))
    return Answer(
        text=_render_answer_text(profile.name, quality, question),
        producer=producer,
        latent_quality=quality,
    )


def _render_answer_text(name: str, quality: float, question: Question) -> str:
    # Name and coarse quality are separate tokens so both recur across
    # questions; the reference prefix carries the fine-grained signal.
    tag = f"[{name}] q{quality:.2f}"
    if question.reference_answer:
        tokens = question.reference_answer.split()
        keep = round(quality * len(tokens))
        if keep:
            return tag + " " + " ".join(tokens[:keep])
    return tag


@dataclass(frozen=True)
class RemoteExpert:
    """A chat-completion backend reached over HTTP."""

    name: str
    endpoint: str
    model: str
    cost: float
    timeout: float = 30.0
    max_tokens: int = 512
    temperature: float = 0.0
    max_inflight: int = 4

    def __post_init__(self) -> None:
        if not self.endpoint.startswith(("http://", "https://")):
            raise ValueError(f"malformed endpoint {self.endpoint!r}")
        if self.cost <= 0:
            raise ValueError("cost must be positive")


def remote_answer(expert: RemoteExpert, prompt: str, credentials: str | None = None) -> str:
    """Send one chat-completion request and return the assistant text.

    Request body: ``{"model", "messages": [{"role": "user", "content"}],
    "temperature", "max_tokens"}``; the reply is read from
    ``choices[0].message.content``.
    """
    headers = {"Content-Type": "application/json"}
    if credentials:
        headers["Authorization"] = f"Bearer {credentials}"
    payload = {
        "model": expert.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": expert.temperature,
        "max_tokens": expert.max_tokens,
    }
    try:
        response = requests.post(
            expert.endpoint, json=payload, headers=headers, timeout=expert.timeout
        )
    except requests.exceptions.Timeout as exc:
        raise RemoteTimeoutError(expert.name, f"timed out after {expert.timeout}s") from exc
    except requests.exceptions.RequestException as exc:
        raise RemoteNetworkError(expert.name, str(exc)) from exc
    if response.status_code < 200 or response.status_code >= 300:
        raise RemoteStatusError(expert.name, response.status_code, response.text)
    try:
        body = response.json()
        content = body["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise RemoteProtocolError(expert.name, f"unexpected response shape: {exc}") from exc
    if not isinstance(content, str):
        raise RemoteProtocolError(expert.name, "message content is not text")
    return content


class ExpertPool:
    """Ordered pool of experts sharing one cost model.

    ``invoke`` dispatches a prompt to the expert at ``index``; remote
    failures are retried up to ``retries`` times with exponential backoff.
    Synthetic experts never fail.
    """

    def __init__(
        self,
        experts: Sequence[ExpertProfile | RemoteExpert],
        retries: int = 2,
        backoff: float = 0.5,
    ):
        if not experts:
            raise ValueError("pool must contain at least one expert")
        self.experts = tuple(experts)
        self.retries = retries
        self.backoff = backoff
        self._api_key = os.environ.get(API_KEY_ENV)
        self._semaphores = {
            i: threading.Semaphore(e.max_inflight)
            for i, e in enumerate(self.experts)
            if isinstance(e, RemoteExpert)
        }

    def __len__(self) -> int:
        return len(self.experts)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.experts)

    def cost_model(self) -> CostModel:
        return CostModel([e.cost for e in self.experts])

    def is_synthetic(self) -> bool:
        return all(isinstance(e, ExpertProfile) for e in self.experts)

    def is_deterministic(self) -> bool:
        return self.is_synthetic() and all(e.noise_sigma == 0.0 for e in self.experts)

    def invoke(
        self,
        index: int,
        prompt: str,
        question: Question,
        prev: Answer | None,
        rng: np.random.Generator | None = None,
    ) -> Answer:
        if not 0 <= index < len(self.experts):
            raise IndexError(f"expert index {index} outside pool of {len(self.experts)}")
        expert = self.experts[index]
        if isinstance(expert, ExpertProfile):
            prev_quality = prev.latent_quality if prev is not None else None
            return synthetic_answer(
                expert, question, prev_quality, rng, producer=index
            )
        return self._invoke_remote(index, expert, prompt)

    def _invoke_remote(self, index: int, expert: RemoteExpert, prompt: str) -> Answer:
        last: BackendError | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._semaphores[index]:
                    text = remote_answer(expert, prompt, self._api_key)
                return Answer(text=text, producer=index)
            except (RemoteTimeoutError, RemoteNetworkError, RemoteStatusError) as exc:
                exc.expert_index = index
                if isinstance(exc, RemoteStatusError) and exc.status < 500:
                    raise
                last = exc
        assert last is not None
        raise last


# Shipped benchmark: four complementary profiles over three topics.  No
# single expert dominates every topic; the weak-soloist topic only clears
# the stop threshold through a transfer hop.  Transfer efficiencies are
# kept moderate so answers drift slowly once past the threshold.
BENCHMARK_PROFILES = (
    ExpertProfile("vector", skills=(0.99, 0.30, 0.25), transfer_efficiency=0.20, cost=13.0),
    ExpertProfile("atlas", skills=(0.28, 0.99, 0.22), transfer_efficiency=0.20, cost=12.0),
    ExpertProfile("flux", skills=(0.32, 0.26, 0.82), transfer_efficiency=0.25, cost=7.0),
    ExpertProfile("echo", skills=(0.46, 0.44, 0.64), transfer_efficiency=0.65, cost=6.0),
)

_TOPIC_WORDS = ("algebra", "geography", "chemistry")
_REFERENCE_LENGTH = 12


def generate_questions(
    n: int,
    seed: int,
    *,
    n_topics: int = 3,
    difficulty_range: tuple[float, float] = (0.05, 0.45),
    id_prefix: str = "q",
) -> list[Question]:
    """Deterministic synthetic questions with references and topic tags."""
    if n < 1:
        raise ValueError("need at least one question")
    rng = np.random.default_rng(seed)
    lo, hi = difficulty_range
    questions = []
    for i in range(n):
        topic = int(rng.integers(n_topics))
        word = _TOPIC_WORDS[topic % len(_TOPIC_WORDS)]
        difficulty = float(rng.uniform(lo, hi))
        # Reference tokens are shared across questions (save the case tag)
        # so answer prefixes expose question-independent quality evidence.
        text = f"{word} question {id_prefix}{i}: explain the {word} case {i} step by step"
        reference = " ".join(
            [word, "summary", f"case{i}"]
            + [f"point{j}" for j in range(_REFERENCE_LENGTH - 3)]
        )
        questions.append(
            Question(
                id=f"{id_prefix}{i}",
                text=text,
                reference_answer=reference,
                topic=topic,
                difficulty=difficulty,
            )
        )
    return questions
