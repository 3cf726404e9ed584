"""Domain types for the routing decision process and canonical text renderings.

A routing episode walks a question through a sequence of experts.  The
decision state is the question plus the most recent answer; prompts passed
to experts are rendered from these types and nothing else.
"""

from __future__ import annotations

from dataclasses import dataclass


KNOWLEDGE_TRANSFER_TEMPLATE = (
    "{question}\n"
    "There is an answer to the question from another student:\n"
    "{prev_answer}\n"
    "Using another student's answer as additional advice, you need to give "
    "a more satisfactory answer directly. DO NOT mention other students."
)


@dataclass(frozen=True)
class Question:
    """An input question, optionally with a gold reference for scoring.

    ``topic`` and ``difficulty`` are only meaningful for the synthetic
    expert backend; remote pools ignore them.
    """

    id: str
    text: str
    reference_answer: str | None = None
    topic: int | None = None
    difficulty: float | None = None

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("question text must be nonempty")
        if self.difficulty is not None and not 0.0 <= self.difficulty <= 1.0:
            raise ValueError(f"difficulty must lie in [0, 1], got {self.difficulty}")


@dataclass(frozen=True)
class Answer:
    """One expert's answer.  ``latent_quality`` is set by the synthetic
    backend only and is never exposed to the policy directly."""

    text: str
    producer: int
    latent_quality: float | None = None

    def __post_init__(self) -> None:
        if self.latent_quality is not None and not 0.0 <= self.latent_quality <= 1.0:
            raise ValueError(
                f"latent_quality must lie in [0, 1], got {self.latent_quality}"
            )


@dataclass(frozen=True)
class State:
    """Decision state at step ``step``: the question and the answer so far."""

    question: Question
    answer: Answer | None = None
    step: int = 0

    def __post_init__(self) -> None:
        if self.step < 0:
            raise ValueError("step must be nonnegative")
        if (self.answer is None) != (self.step == 0):
            raise ValueError("answer must be absent exactly at step 0")


@dataclass(frozen=True)
class Action:
    """Selection of the next expert by zero-based pool index."""

    expert_index: int

    def __post_init__(self) -> None:
        if self.expert_index < 0:
            raise ValueError("expert_index must be nonnegative")


@dataclass(frozen=True)
class Route:
    """The ordered experts invoked for one question, plus the final answer.

    Repeats are allowed: the action space is the full pool at every step.
    """

    steps: tuple[Action, ...]
    terminal_answer: Answer

    def __post_init__(self) -> None:
        if len(self.steps) < 1:
            raise ValueError("a route must contain at least one step")

    def expert_indices(self) -> tuple[int, ...]:
        return tuple(a.expert_index for a in self.steps)


def render_state(state: State) -> str:
    """Canonical text form of a state, the only input the policy encoder sees."""
    answer_text = "None" if state.answer is None else state.answer.text
    return f"Q: {state.question.text}\nA: {answer_text}"


def render_ktp(question: Question, prev_answer: Answer) -> str:
    """Knowledge-transfer prompt handed to the next expert from step 1 onward."""
    if prev_answer is None:
        raise ValueError("knowledge transfer requires a previous answer; "
                         "use render_first_prompt at step 0")
    return KNOWLEDGE_TRANSFER_TEMPLATE.format(
        question=question.text, prev_answer=prev_answer.text
    )


def render_first_prompt(question: Question) -> str:
    """Prompt for the first expert: the raw question, unchanged."""
    return question.text
