"""Configuration and dataset loading.

The run configuration is one TOML document with ``[pool]``, ``[reward]``,
``[ppo]``, ``[encoder]`` and ``[terminator]`` sections.  Unknown keys are
hard errors so typos never silently fall back to defaults.  Datasets are
line-delimited JSON records ``{id, question, reference, topic?, difficulty?}``.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .experts import ExpertPool, ExpertProfile, RemoteExpert
from .ppo import PpoConfig
from .rewards import LatentQualityScorer, OverlapScorer, QualityScorer, RewardConfig
from .terminator import TerminatorTrainConfig


class ConfigError(ValueError):
    """Bad configuration or dataset input."""


_SECTIONS = {"pool", "reward", "ppo", "encoder", "terminator"}
_REWARD_KEYS = {"alpha", "beta", "gamma", "p0", "t_max", "scorer"}
_PPO_KEYS = {
    "clip_epsilon", "discount", "buffer_size", "updates_per_flush",
    "actor_lr", "critic_lr", "batch_size", "max_epochs",
    "plateau_window", "plateau_tol", "entropy_coef",
}
_ENCODER_KEYS = {"dim", "hidden"}
_TERMINATOR_KEYS = {"threshold", "lr", "epochs", "l2", "holdout_fraction", "seed"}
_POOL_KEYS = {"experts"}
_SYNTHETIC_KEYS = {"kind", "name", "skills", "transfer_efficiency", "cost", "noise_sigma"}
_REMOTE_KEYS = {
    "kind", "name", "endpoint", "model", "cost",
    "timeout", "max_tokens", "temperature", "max_inflight",
}


@dataclass
class EncoderConfig:
    dim: int = 1024
    hidden: int = 128


@dataclass
class RunConfig:
    experts: list[ExpertProfile | RemoteExpert]
    reward: RewardConfig
    ppo: PpoConfig
    encoder: EncoderConfig
    terminator: TerminatorTrainConfig
    scorer_kind: str = "latent"

    def build_pool(self) -> ExpertPool:
        return ExpertPool(self.experts)

    def build_scorer(self) -> QualityScorer:
        if self.scorer_kind == "latent":
            return LatentQualityScorer()
        if self.scorer_kind == "overlap":
            return OverlapScorer()
        raise ConfigError(f"unknown scorer {self.scorer_kind!r}")


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            document = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return parse_config(document)


def parse_config(document: dict) -> RunConfig:
    _reject_unknown(document, _SECTIONS, "top level")

    reward_section = dict(document.get("reward", {}))
    _reject_unknown(reward_section, _REWARD_KEYS, "[reward]")
    scorer_kind = reward_section.pop("scorer", "latent")
    reward = _build(RewardConfig, reward_section, "[reward]")

    ppo_section = dict(document.get("ppo", {}))
    _reject_unknown(ppo_section, _PPO_KEYS, "[ppo]")
    ppo = _build(PpoConfig, ppo_section, "[ppo]")

    encoder_section = dict(document.get("encoder", {}))
    _reject_unknown(encoder_section, _ENCODER_KEYS, "[encoder]")
    encoder = _build(EncoderConfig, encoder_section, "[encoder]")

    terminator_section = dict(document.get("terminator", {}))
    _reject_unknown(terminator_section, _TERMINATOR_KEYS, "[terminator]")
    terminator = _build(TerminatorTrainConfig, terminator_section, "[terminator]")

    pool_section = dict(document.get("pool", {}))
    _reject_unknown(pool_section, _POOL_KEYS, "[pool]")
    experts = [_parse_expert(e, i) for i, e in enumerate(pool_section.get("experts", []))]

    return RunConfig(
        experts=experts,
        reward=reward,
        ppo=ppo,
        encoder=encoder,
        terminator=terminator,
        scorer_kind=scorer_kind,
    )


def _parse_expert(entry: dict, index: int) -> ExpertProfile | RemoteExpert:
    kind = entry.get("kind")
    where = f"[[pool.experts]] #{index}"
    if kind == "synthetic":
        _reject_unknown(entry, _SYNTHETIC_KEYS, where)
        fields = {k: v for k, v in entry.items() if k != "kind"}
        if "skills" in fields:
            fields["skills"] = tuple(float(s) for s in fields["skills"])
        return _build(ExpertProfile, fields, where)
    if kind == "remote":
        _reject_unknown(entry, _REMOTE_KEYS, where)
        fields = {k: v for k, v in entry.items() if k != "kind"}
        return _build(RemoteExpert, fields, where)
    raise ConfigError(f"{where}: kind must be 'synthetic' or 'remote', got {kind!r}")


def _reject_unknown(mapping: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")


def _build(cls, fields: dict, where: str):
    try:
        return cls(**fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_dataset(path: str | Path) -> list:
    """Read questions from a JSONL dataset file."""
    from .types import Question

    path = Path(path)
    if not path.exists():
        raise ConfigError(f"dataset file not found: {path}")
    questions = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                questions.append(
                    Question(
                        id=str(record["id"]),
                        text=record["question"],
                        reference_answer=record.get("reference"),
                        topic=record.get("topic"),
                        difficulty=record.get("difficulty"),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"{path}:{lineno}: bad record: {exc}") from exc
    if not questions:
        raise ConfigError(f"dataset {path} is empty")
    return questions


def write_dataset(path: str | Path, questions: list) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in questions:
            record = {"id": q.id, "question": q.text, "reference": q.reference_answer}
            if q.topic is not None:
                record["topic"] = q.topic
            if q.difficulty is not None:
                record["difficulty"] = q.difficulty
            fh.write(json.dumps(record) + "\n")
