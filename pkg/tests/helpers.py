"""Independent oracles shared by the module and acceptance tests."""

from __future__ import annotations

import numpy as np

from der.policy import HeadParams


def reference_actor_loss(params: HeadParams, features, actions, old_log_probs,
                         advantages, clip_epsilon) -> float:
    """Textbook clipped-surrogate loss, written separately from the
    production backward pass."""
    hidden = np.tanh(features @ params.w1 + params.b1)
    logits = hidden @ params.w2 + params.b2
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    lp = log_probs[np.arange(len(actions)), actions]
    ratio = np.exp(lp - old_log_probs)
    surr1 = ratio * advantages
    surr2 = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * advantages
    return float(-np.minimum(surr1, surr2).mean())


def reference_critic_loss(params: HeadParams, features, returns) -> float:
    hidden = np.tanh(features @ params.w1 + params.b1)
    values = (hidden @ params.w2 + params.b2)[:, 0]
    return float(np.mean((values - returns) ** 2))


def finite_difference_grads(loss_fn, params: HeadParams, h: float = 1e-5) -> HeadParams:
    """Central finite differences of ``loss_fn(params)`` over every entry."""
    grads = HeadParams(*[np.zeros_like(a) for a in params.arrays()])
    for p_arr, g_arr in zip(params.arrays(), grads.arrays()):
        flat_p = p_arr.ravel()
        flat_g = g_arr.ravel()
        for i in range(flat_p.size):
            original = flat_p[i]
            flat_p[i] = original + h
            up = loss_fn(params)
            flat_p[i] = original - h
            down = loss_fn(params)
            flat_p[i] = original
            flat_g[i] = (up - down) / (2.0 * h)
    return grads


def relative_grad_error(analytic: HeadParams, numeric: HeadParams) -> float:
    a = np.concatenate([g.ravel() for g in analytic.arrays()])
    n = np.concatenate([g.ravel() for g in numeric.arrays()])
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(n)), 1e-12)
    return float(np.linalg.norm(a - n)) / denom
