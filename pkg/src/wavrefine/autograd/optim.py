"""RMSprop over named parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from wavrefine.autograd.tensor import NonFiniteError, Tensor


@dataclass
class RmspropState:
    learning_rate: float = 2e-4
    decay: float = 0.9
    epsilon: float = 1e-8
    accumulators: dict[str, np.ndarray] = field(default_factory=dict)


def rmsprop_step(params: dict[str, Tensor], grads: dict[str, np.ndarray | None], state: RmspropState):
    """In-place update ``v <- rho v + (1 - rho) g^2; p <- p - lr g / (sqrt(v) + eps)``.

    Parameters whose gradient is None are left alone. Returns ``(params, state)``.
    """
    for name, g in grads.items():
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} {p.shape}")
        v = state.accumulators.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        v *= state.decay
        v += (1 - state.decay) * g * g
        state.accumulators[name] = v
        p.data -= (state.learning_rate * g / (np.sqrt(v) + state.epsilon)).astype(p.dtype)
    return params, state
