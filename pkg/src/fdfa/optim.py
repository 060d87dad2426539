"""SGD, bias-corrected Adam and per-epoch exponential learning-rate decay."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .core import ShapeError


@dataclass(frozen=True)
class OptimConfig:
    method: str = "adam"
    lr: float = 1e-4
    alpha: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    decay: float = 0.95

    def __post_init__(self):
        if self.method not in ("sgd", "adam"):
            raise ValueError(f"method must be 'sgd' or 'adam', got {self.method!r}")
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        for name in ("beta1", "beta2"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {getattr(self, name)}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0 < self.decay <= 1:
            raise ValueError(f"decay must lie in (0, 1], got {self.decay}")

    def with_(self, **kw) -> "OptimConfig":
        return replace(self, **kw)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, w: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(w), np.zeros_like(w), 0)


def _same_shape(w: np.ndarray, g: np.ndarray) -> None:
    if w.shape != g.shape:
        raise ShapeError(f"parameter {w.shape} and gradient {g.shape} differ")


def sgd_step(w: np.ndarray, g: np.ndarray, lr: float) -> np.ndarray:
    _same_shape(w, g)
    return w - lr * g


def adam_step(state: AdamState, w: np.ndarray, g: np.ndarray, cfg: OptimConfig, lr: float | None = None):
    """Pure Adam update; returns ``(new_state, new_w)`` and leaves inputs untouched."""
    _same_shape(w, g)
    _same_shape(state.m, g)
    lr = cfg.lr if lr is None else lr
    t = state.t + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * g * g
    m_hat = m / (1.0 - cfg.beta1 ** t)
    v_hat = v / (1.0 - cfg.beta2 ** t)
    return AdamState(m, v, t), w - lr * m_hat / (np.sqrt(v_hat) + cfg.epsilon)


def decay_lr(cfg: OptimConfig, epoch: int, base: float | None = None) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    base = cfg.lr if base is None else base
    return base * cfg.decay ** epoch


@dataclass
class Optimizer:
    """In-place optimizer over a list of parameter arrays.

    The learning rate is set per call so that epoch decay stays with the
    caller.  Adam uses the compiled fused update when it is available.
    """

    cfg: OptimConfig
    params: list
    states: list = field(init=False)

    def __post_init__(self):
        self.states = [AdamState.zeros_like(p) for p in self.params]

    def step(self, grads: list, lr: float) -> None:
        if len(grads) != len(self.params):
            raise ShapeError(f"{len(grads)} gradients for {len(self.params)} parameters")
        if self.cfg.method == "sgd":
            for p, g in zip(self.params, grads):
                _same_shape(p, g)
                p -= lr * g
            return
        c = self.cfg
        for p, g, s in zip(self.params, grads, self.states):
            _same_shape(p, g)
            s.t += 1
            kernels.adam_update(p, g, s.m, s.v, lr, c.beta1, c.beta2, c.epsilon,
                                1.0 - c.beta1 ** s.t, 1.0 - c.beta2 ** s.t)
