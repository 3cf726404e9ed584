"""The stop classifier used at evaluation time.

A logistic head over the shared text encoder predicts whether the current
answer already meets the quality threshold, replacing the reference-based
check when no references are available.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoding import Encoder, HashedNgramEncoder
from .types import State, render_state


@dataclass
class TerminatorParams:
    weights: np.ndarray
    bias: float
    threshold: float = 0.5

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.weights)) or not np.isfinite(self.bias):
            raise ValueError("terminator parameters must be finite")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("decision threshold must lie in (0, 1)")


@dataclass(frozen=True)
class TerminatorTrainConfig:
    # Full-batch GD on unit-norm features converges slowly; the aggressive
    # defaults are what the convex loss needs to actually separate.
    lr: float = 5.0
    epochs: int = 3000
    l2: float = 1e-6
    holdout_fraction: float = 0.2
    threshold: float = 0.5
    seed: int = 0


def train_terminator(
    examples: Sequence[tuple[State, bool]],
    encoder: Encoder,
    cfg: TerminatorTrainConfig = TerminatorTrainConfig(),
) -> tuple[TerminatorParams, float]:
    """Fit the logistic head with gradient descent on cross-entropy.

    Returns the parameters and the held-out accuracy.  Raises if the
    training set is empty or contains a single class only.
    """
    if not examples:
        raise ValueError("terminator training set is empty")
    labels = np.array([bool(label) for _, label in examples], dtype=np.float64)
    if labels.min() == labels.max():
        raise ValueError("terminator training set contains a single class")
    features = np.stack([encoder.encode(render_state(state)) for state, _ in examples])

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(examples))
    n_holdout = max(1, int(len(examples) * cfg.holdout_fraction))
    holdout, training = order[:n_holdout], order[n_holdout:]
    if training.size == 0 or labels[training].min() == labels[training].max():
        raise ValueError("training split degenerate; provide more examples")

    x_train, y_train = features[training], labels[training]
    weights = np.zeros(features.shape[1])
    bias = 0.0
    n = x_train.shape[0]
    for _ in range(cfg.epochs):
        probs = _sigmoid(x_train @ weights + bias)
        error = probs - y_train
        grad_w = x_train.T @ error / n + cfg.l2 * weights
        grad_b = float(error.mean())
        weights -= cfg.lr * grad_w
        bias -= cfg.lr * grad_b

    params = TerminatorParams(weights=weights, bias=bias, threshold=cfg.threshold)
    holdout_probs = _sigmoid(features[holdout] @ weights + bias)
    predictions = holdout_probs >= cfg.threshold
    accuracy = float((predictions == labels[holdout].astype(bool)).mean())
    return params, accuracy


def stop_probability(state: State, params: TerminatorParams, encoder: Encoder) -> float:
    if state.answer is None:
        raise ValueError("stop decision needs a state with an answer")
    features = encoder.encode(render_state(state))
    return float(_sigmoid(features @ params.weights + params.bias))


def should_stop(state: State, params: TerminatorParams, encoder: Encoder) -> bool:
    """True when the predicted stop probability reaches the threshold."""
    return stop_probability(state, params, encoder) >= params.threshold


def save_terminator(path: str | Path, params: TerminatorParams, encoder_dim: int) -> None:
    meta = {"threshold": params.threshold, "encoder_dim": encoder_dim}
    np.savez(
        Path(path),
        meta=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
        weights=params.weights,
        bias=np.array([params.bias]),
    )


def load_terminator(path: str | Path) -> tuple[TerminatorParams, HashedNgramEncoder]:
    with np.load(Path(path)) as archive:
        meta = json.loads(bytes(archive["meta"]).decode("utf-8"))
        params = TerminatorParams(
            weights=archive["weights"],
            bias=float(archive["bias"][0]),
            threshold=float(meta["threshold"]),
        )
    return params, HashedNgramEncoder(dim=int(meta["encoder_dim"]))


def _sigmoid(z: np.ndarray | float) -> np.ndarray | float:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
