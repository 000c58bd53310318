"""First-order update rules: Adam (default) and SGD with momentum.

Parameters travel as a flat list of arrays; the state carries one moment
slot per array in the same order. Updates are pure with respect to the
parameter arrays (fresh arrays are returned) while moment buffers are
updated in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ParameterError, ShapeError

ADAM = "adam"
SGD = "sgd"


@dataclass
class OptimState:
    kind: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    momentum: float = 0.9
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)  # first moments / velocities
    v: list[np.ndarray] = field(default_factory=list)  # second moments (Adam only)

    def __post_init__(self) -> None:
        if self.kind not in (ADAM, SGD):
            raise ParameterError(f"optimizer kind must be 'adam' or 'sgd', got {self.kind!r}")
        if self.lr <= 0:
            raise ParameterError(f"learning rate must be > 0, got {self.lr}")


def make_optim_state(
    kind: str,
    params: list[np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
    momentum: float = 0.9,
) -> OptimState:
    state = OptimState(kind, lr, beta1, beta2, epsilon, momentum)
    state.m = [np.zeros_like(p) for p in params]
    if kind == ADAM:
        state.v = [np.zeros_like(p) for p in params]
    return state


def _check_step_inputs(params: list[np.ndarray], grads: list[np.ndarray], state: OptimState) -> None:
    if len(params) != len(grads):
        raise ShapeError(f"got {len(params)} params but {len(grads)} gradients")
    if len(state.m) != len(params):
        raise ShapeError(f"optimizer state holds {len(state.m)} slots for {len(params)} params")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeError(f"parameter {i}: shape {p.shape} != gradient shape {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {i} (shape {p.shape})")


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: OptimState) -> list[np.ndarray]:
    """Standard Adam with bias correction. Returns the updated parameters."""
    if state.kind != ADAM:
        raise ParameterError(f"adam_step called with {state.kind!r} state")
    _check_step_inputs(params, grads, state)
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        g = g.astype(p.dtype, copy=False)
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / (1.0 - b1**t)
        v_hat = state.v[i] / (1.0 - b2**t)
        out.append((p - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(p.dtype))
    return out


def sgd_momentum_step(params: list[np.ndarray], grads: list[np.ndarray], state: OptimState) -> list[np.ndarray]:
    """v <- momentum * v + g; p <- p - lr * v. Returns the updated parameters."""
    if state.kind != SGD:
        raise ParameterError(f"sgd_momentum_step called with {state.kind!r} state")
    _check_step_inputs(params, grads, state)
    state.t += 1
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        g = g.astype(p.dtype, copy=False)
        state.m[i] = state.momentum * state.m[i] + g
        out.append((p - state.lr * state.m[i]).astype(p.dtype))
    return out


def optim_step(params: list[np.ndarray], grads: list[np.ndarray], state: OptimState) -> list[np.ndarray]:
    if state.kind == ADAM:
        return adam_step(params, grads, state)
    return sgd_momentum_step(params, grads, state)


def clip_gradients(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    if max_norm <= 0:
        raise ParameterError(f"max_norm must be > 0, got {max_norm}")
    total = 0.0
    for g in grads:
        total += float(np.sum(g.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm <= max_norm or norm == 0.0:
        return [g.copy() for g in grads]
    scale = max_norm / norm
    return [(g * g.dtype.type(scale)) for g in grads]
