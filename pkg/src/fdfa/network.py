"""Bias-free fully-connected networks.

Layers are numbered 1..L as in the usual notation; ``weights[l - 1]`` is the
``(n_l, n_{l-1})`` matrix of layer ``l``.  Traces keep the same convention:
``post[l]`` is ``y^(l)`` (``post[0]`` is the input) and ``pre[l - 1]`` is
``a^(l)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import RngStream, ShapeError, as_vector

ACTIVATIONS = ("relu", "identity", "tanh")


def activate(name: str, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "identity":
        return a.copy()
    if name == "tanh":
        return np.tanh(a)
    raise ValueError(f"unknown activation {name!r}")


def activate_prime(name: str, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        # derivative at exactly 0 is taken as 1 so zero-initialised layers can learn
        return (a >= 0.0).astype(np.float64)
    if name == "identity":
        return np.ones_like(a)
    if name == "tanh":
        t = np.tanh(a)
        return 1.0 - t * t
    raise ValueError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 2:
            raise ValueError("an MLP needs at least an input and an output width")
        if any(w < 1 for w in widths):
            raise ValueError(f"all widths must be >= 1, got {widths}")
        if self.hidden_activation not in ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation != "identity":
            raise ValueError("the output layer is always linear")

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    def weight_shape(self, layer: int) -> tuple:
        return (self.widths[layer], self.widths[layer - 1])

    def activation(self, layer: int) -> str:
        return self.output_activation if layer == self.depth else self.hidden_activation


@dataclass
class MlpState:
    spec: MlpSpec
    weights: list

    def __post_init__(self):
        if len(self.weights) != self.spec.depth:
            raise ShapeError(f"expected {self.spec.depth} weight matrices, got {len(self.weights)}")
        for l, w in enumerate(self.weights, start=1):
            if w.shape != self.spec.weight_shape(l):
                raise ShapeError(
                    f"layer {l}: weight shape {w.shape} != expected {self.spec.weight_shape(l)}")

    @property
    def depth(self) -> int:
        return self.spec.depth

    def copy(self) -> "MlpState":
        return MlpState(self.spec, [w.copy() for w in self.weights])

    def n_params(self) -> int:
        return sum(w.size for w in self.weights)


@dataclass
class ForwardTrace:
    pre: list
    post: list

    @property
    def output(self) -> np.ndarray:
        return self.post[-1]


@dataclass
class TangentTrace:
    tangents: list

    @property
    def output(self) -> np.ndarray:
        return self.tangents[-1]


@dataclass
class PerturbationDraw:
    """Random direction for one forward-mode pass.

    ``weight`` holds one matrix per layer (weight mode).  ``activity`` holds
    one vector per hidden layer, plus one for the output layer when
    ``perturb_output`` is set (activity mode).  A ``None`` entry in either
    list means that layer is not perturbed.
    """

    mode: str
    weight: Optional[list] = None
    activity: Optional[list] = None
    perturb_output: bool = False

    def validate(self, spec: MlpSpec) -> None:
        L = spec.depth
        if self.mode == "weight":
            if self.weight is None or self.activity is not None:
                raise ShapeError("weight-mode draw must carry only weight perturbations")
            if len(self.weight) != L:
                raise ShapeError(f"expected {L} weight perturbations, got {len(self.weight)}")
            for l, v in enumerate(self.weight, start=1):
                if v is not None and v.shape != spec.weight_shape(l):
                    raise ShapeError(f"layer {l}: perturbation {v.shape} != {spec.weight_shape(l)}")
        elif self.mode == "activity":
            if self.activity is None or self.weight is not None:
                raise ShapeError("activity-mode draw must carry only activity perturbations")
            expected = L if self.perturb_output else L - 1
            if len(self.activity) != expected:
                raise ShapeError(f"expected {expected} activity perturbations, got {len(self.activity)}")
            for l, v in enumerate(self.activity, start=1):
                if v is not None and v.shape != (spec.widths[l],):
                    raise ShapeError(f"layer {l}: perturbation {v.shape} != ({spec.widths[l]},)")
        else:
            raise ValueError(f"unknown perturbation mode {self.mode!r}")


def kaiming_bound(fan_in: int) -> float:
    return float(np.sqrt(6.0 / fan_in))


def kaiming_uniform(rng: RngStream, shape: tuple) -> np.ndarray:
    b = kaiming_bound(shape[1])
    return rng.uniform(-b, b, shape)


def kaiming_uniform_init(spec: MlpSpec, rng: RngStream) -> MlpState:
    """Each ``W^(l)`` entry ~ U(-b, b) with ``b = sqrt(6 / n_{l-1})``."""
    weights = [kaiming_uniform(rng, spec.weight_shape(l)) for l in range(1, spec.depth + 1)]
    return MlpState(spec, weights)


def zeros_init(spec: MlpSpec) -> MlpState:
    return MlpState(spec, [np.zeros(spec.weight_shape(l)) for l in range(1, spec.depth + 1)])


def _check_input(net: MlpState, x) -> np.ndarray:
    x = as_vector(x, "x")
    if x.shape[0] != net.spec.widths[0]:
        raise ShapeError(f"input length {x.shape[0]} != n_0 = {net.spec.widths[0]}")
    return x


def forward(net: MlpState, x) -> ForwardTrace:
    x = _check_input(net, x)
    pre, post = [], [x]
    y = x
    for l, w in enumerate(net.weights, start=1):
        a = w @ y
        y = activate(net.spec.activation(l), a)
        pre.append(a)
        post.append(y)
    return ForwardTrace(pre, post)


def forward_with_tangent(net: MlpState, x, draw: PerturbationDraw):
    """Forward pass carrying a tangent (dual) component.

    Returns ``(ForwardTrace, TangentTrace)``; the output tangent is the
    Jacobian-vector product of the network output along the drawn direction.
    """
    x = _check_input(net, x)
    draw.validate(net.spec)
    L = net.depth
    pre, post = [], [x]
    tangents = [np.zeros_like(x)]
    y, d = x, tangents[0]
    for l, w in enumerate(net.weights, start=1):
        act = net.spec.activation(l)
        a = w @ y
        s = activate_prime(act, a)
        if draw.mode == "weight":
            v = draw.weight[l - 1]
            t = w @ d
            if v is not None:
                t = t + v @ y
            d = t * s
        else:
            d = (w @ d) * s
            if l < L or draw.perturb_output:
                v = draw.activity[l - 1]
                if v is not None:
                    d = d + v
        y = activate(act, a)
        pre.append(a)
        post.append(y)
        tangents.append(d)
    return ForwardTrace(pre, post), TangentTrace(tangents)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z)
    ez = np.exp(z)
    return ez / ez.sum()


def loss_and_error(y_out, target: int):
    """Softmax cross-entropy and its gradient ``softmax(y) - onehot(target)``."""
    y_out = as_vector(y_out, "y_L")
    n = y_out.shape[0]
    if not 0 <= int(target) < n:
        raise IndexError(f"target {target} out of range for {n} outputs")
    z = y_out - np.max(y_out)
    log_norm = np.log(np.sum(np.exp(z)))
    loss = float(log_norm - z[target])
    e = np.exp(z - log_norm)
    e[target] -= 1.0
    return loss, e


def activation_gradients(net: MlpState, trace: ForwardTrace, e: np.ndarray) -> list:
    """``dL/dy^(l)`` for l = 1..L by reverse accumulation (index l-1)."""
    L = net.depth
    grads = [None] * L
    g = e
    grads[L - 1] = g
    for l in range(L, 1, -1):
        delta = g * activate_prime(net.spec.activation(l), trace.pre[l - 1])
        g = net.weights[l - 1].T @ delta
        grads[l - 2] = g
    return grads


@dataclass
class GradientEstimate:
    grads: list
    loss: float
    error: np.ndarray
    extras: dict = field(default_factory=dict)

    def flat(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.grads])


def backprop(net: MlpState, x, target: int, trace: Optional[ForwardTrace] = None) -> GradientEstimate:
    """Exact reverse-mode weight gradients of the softmax cross-entropy."""
    if trace is None:
        trace = forward(net, x)
    loss, e = loss_and_error(trace.output, target)
    L = net.depth
    grads = [None] * L
    g = e
    for l in range(L, 0, -1):
        delta = g * activate_prime(net.spec.activation(l), trace.pre[l - 1])
        grads[l - 1] = np.multiply.outer(delta, trace.post[l - 1])
        if l > 1:
            g = net.weights[l - 1].T @ delta
    return GradientEstimate(grads, loss, e)


def predict(net: MlpState, inputs: np.ndarray) -> np.ndarray:
    """Batched class prediction, used for evaluation only."""
    y = np.asarray(inputs, dtype=np.float64)
    for l, w in enumerate(net.weights, start=1):
        y = activate(net.spec.activation(l), y @ w.T)
    return np.argmax(y, axis=1)


def mean_loss(net: MlpState, inputs: np.ndarray, labels: Sequence[int]) -> float:
    y = np.asarray(inputs, dtype=np.float64)
    for l, w in enumerate(net.weights, start=1):
        y = activate(net.spec.activation(l), y @ w.T)
    z = y - y.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1))
    labels = np.asarray(labels)
    return float(np.mean(logz - z[np.arange(len(labels)), labels]))
