"""AdamW over named parameter arrays, global-norm clipping, cosine schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    """A gradient contained NaN/Inf; the message lists the offending arrays."""


def cosine_lr(base_lr: float, step_index: int, steps: int) -> float:
    """lr * 0.5 * (1 + cos(pi * step/steps)); exactly 0 at step == steps."""
    if steps <= 0 or step_index >= steps:
        return 0.0
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step_index / steps))


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values()))


def clip_by_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """Rescale all gradients together so their joint L2 norm is at most ``max_norm``.

    Returns the clipped gradients and the pre-clip norm.
    """
    norm = global_norm(grads)
    if norm > max_norm:
        f = max_norm / norm
        return {k: g * f for k, g in grads.items()}, norm
    return dict(grads), norm


def check_finite(grads: Mapping[str, np.ndarray]) -> None:
    bad = {k: int(np.count_nonzero(~np.isfinite(g))) for k, g in grads.items()}
    bad = {k: v for k, v in bad.items() if v}
    if bad:
        detail = ", ".join(f"{k}: {v} non-finite" for k, v in bad.items())
        raise NonFiniteGradientError(f"non-finite gradients ({detail})")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adamw_update(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    *,
    betas: tuple[float, float] = (0.9, 0.95),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    decay: Iterable[str] = (),
    lr_scales: Mapping[str, float] | None = None,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One decoupled-weight-decay Adam step; inputs are not modified.

    ``lr_scales`` multiplies the Adam step of individual arrays; the decay
    term always uses the unscaled ``lr``.
    """
    b1, b2 = betas
    t = state.t + 1
    decay = set(decay)
    lr_scales = lr_scales or {}
    new_params, m_out, v_out = {}, {}, {}
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            new_params[k] = p
            continue
        m = state.m.get(k, np.zeros_like(p)) * b1 + (1 - b1) * g
        v = state.v.get(k, np.zeros_like(p)) * b2 + (1 - b2) * g * g
        m_out[k], v_out[k] = m, v
        step = lr * lr_scales.get(k, 1.0) * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        q = p
        if k in decay and weight_decay:
            q = q - lr * weight_decay * q
        new_params[k] = q - step
    return new_params, AdamState(m_out, v_out, t)
