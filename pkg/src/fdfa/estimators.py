"""Gradient estimators sharing one calling convention.

Every ``estimate_*`` function takes a frozen network and a single labelled
sample and returns a :class:`GradientEstimate` with one matrix per layer.
None of them touch the forward weights.  ``fdfa_step`` is the only one that
mutates state, namely the feedback matrices it is given.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import RngStream, ShapeError
from .network import (
    GradientEstimate,
    MlpSpec,
    MlpState,
    PerturbationDraw,
    activate_prime,
    backprop,
    forward,
    forward_with_tangent,
    kaiming_uniform,
    loss_and_error,
)

ESTIMATORS = ("bp", "fgw", "fga", "lgfga", "dfa", "fdfa")


@dataclass
class FeedbackState:
    """Direct feedback matrices ``B^(l)`` of shape ``(n_L, n_l)``, l = 1..L-1."""

    matrices: list
    alpha: float = 1e-4
    frozen: bool = False

    def __post_init__(self):
        if not self.frozen and not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"feedback learning rate must lie in [0, 1], got {self.alpha}")

    def check(self, spec: MlpSpec) -> None:
        n_out = spec.widths[-1]
        if len(self.matrices) != spec.depth - 1:
            raise ShapeError(f"expected {spec.depth - 1} feedback matrices, got {len(self.matrices)}")
        for l, b in enumerate(self.matrices, start=1):
            if b.shape != (n_out, spec.widths[l]):
                raise ShapeError(f"feedback {l}: shape {b.shape} != {(n_out, spec.widths[l])}")

    def copy(self) -> "FeedbackState":
        return FeedbackState([b.copy() for b in self.matrices], self.alpha, self.frozen)


def dfa_feedback(spec: MlpSpec, rng: RngStream) -> FeedbackState:
    """Fixed random feedback drawn from the uniform Kaiming distribution."""
    n_out = spec.widths[-1]
    mats = [kaiming_uniform(rng, (n_out, spec.widths[l])) for l in range(1, spec.depth)]
    return FeedbackState(mats, alpha=0.0, frozen=True)


def fdfa_feedback(spec: MlpSpec, alpha: float = 1e-4) -> FeedbackState:
    """Learned feedback, starting from zero."""
    n_out = spec.widths[-1]
    mats = [np.zeros((n_out, spec.widths[l])) for l in range(1, spec.depth)]
    return FeedbackState(mats, alpha=alpha, frozen=False)


@dataclass
class LocalHeads:
    """Linear read-outs ``H^(l)`` of shape ``(n_L, n_l)`` for hidden layers l < L-1."""

    matrices: list

    def check(self, spec: MlpSpec) -> None:
        n_out = spec.widths[-1]
        expected = max(spec.depth - 2, 0)
        if len(self.matrices) != expected:
            raise ShapeError(f"expected {expected} local heads, got {len(self.matrices)}")
        for l, h in enumerate(self.matrices, start=1):
            if h.shape != (n_out, spec.widths[l]):
                raise ShapeError(f"head {l}: shape {h.shape} != {(n_out, spec.widths[l])}")


def init_local_heads(spec: MlpSpec, rng: RngStream) -> LocalHeads:
    n_out = spec.widths[-1]
    return LocalHeads([kaiming_uniform(rng, (n_out, spec.widths[l])) for l in range(1, spec.depth - 1)])


def draw_weight_perturbation(spec: MlpSpec, rng: RngStream, perturb_output: bool = True) -> PerturbationDraw:
    L = spec.depth
    mats = []
    for l in range(1, L + 1):
        if l < L or perturb_output:
            mats.append(rng.normal(spec.weight_shape(l)))
        else:
            mats.append(None)
    return PerturbationDraw("weight", weight=mats)


def draw_activity_perturbation(spec: MlpSpec, rng: RngStream) -> PerturbationDraw:
    return PerturbationDraw("activity", activity=[rng.normal(spec.widths[l]) for l in range(1, spec.depth)])


def _output_grad(e: np.ndarray, trace) -> np.ndarray:
    return np.multiply.outer(e, trace.post[-2])


def estimate_bp(net: MlpState, x, target: int) -> GradientEstimate:
    return backprop(net, x, target)


def estimate_fgw(net: MlpState, x, target: int, rng: Optional[RngStream] = None, *,
                 perturb_output: bool = True, draw: Optional[PerturbationDraw] = None) -> GradientEstimate:
    """Weight-perturbed forward gradient: ``g^(l) = (e . d^(L)) V^(l)``."""
    if draw is None:
        draw = draw_weight_perturbation(net.spec, rng, perturb_output)
    trace, tan = forward_with_tangent(net, x, draw)
    loss, e = loss_and_error(trace.output, target)
    d = float(e @ tan.output)
    grads = [d * v if v is not None else np.zeros(net.spec.weight_shape(l))
             for l, v in enumerate(draw.weight, start=1)]
    return GradientEstimate(grads, loss, e, {"directional": d})


def estimate_fga(net: MlpState, x, target: int, rng: Optional[RngStream] = None, *,
                 draw: Optional[PerturbationDraw] = None) -> GradientEstimate:
    """Activity-perturbed forward gradient.

    Hidden layers get ``(d v^(l) * sigma'(a^(l))) outer y^(l-1)``; the output
    layer uses its exact local gradient ``e outer y^(L-1)``.
    """
    if draw is None:
        draw = draw_activity_perturbation(net.spec, rng)
    if draw.perturb_output:
        raise ValueError("FG-A leaves the output layer unperturbed")
    trace, tan = forward_with_tangent(net, x, draw)
    loss, e = loss_and_error(trace.output, target)
    d = float(e @ tan.output)
    L = net.depth
    grads = []
    for l in range(1, L):
        s = activate_prime(net.spec.hidden_activation, trace.pre[l - 1])
        v = draw.activity[l - 1]
        if v is None:
            grads.append(np.zeros(net.spec.weight_shape(l)))
        else:
            grads.append(np.multiply.outer(d * v * s, trace.post[l - 1]))
    grads.append(_output_grad(e, trace))
    return GradientEstimate(grads, loss, e, {"directional": d})


def estimate_lgfga(net: MlpState, heads: LocalHeads, x, target: int,
                   rng: Optional[RngStream] = None, *, directions: Optional[list] = None):
    """Local-greedy activity-perturbed forward gradient.

    Hidden layer ``l < L-1`` is trained by a forward gradient of its own
    softmax read-out ``H^(l) y^(l)``, with the perturbation confined to that
    layer.  The last two layers form one block trained from the global loss.
    Returns ``(estimate, head_gradients)``; head gradients are exact.
    """
    heads.check(net.spec)
    L = net.depth
    if directions is None:
        directions = [rng.normal(net.spec.widths[l]) for l in range(1, L)]
    if len(directions) != L - 1:
        raise ShapeError(f"expected {L - 1} direction vectors, got {len(directions)}")
    trace = forward(net, x)
    loss, e = loss_and_error(trace.output, target)
    grads, head_grads, local_losses = [], [], []
    for l in range(1, L - 1):
        h = heads.matrices[l - 1]
        y = trace.post[l]
        local_loss, e_loc = loss_and_error(h @ y, target)
        u = directions[l - 1]
        # forward-mode tangent of the local read-out along u
        d = float(e_loc @ (h @ u))
        s = activate_prime(net.spec.hidden_activation, trace.pre[l - 1])
        grads.append(np.multiply.outer(d * u * s, trace.post[l - 1]))
        head_grads.append(np.multiply.outer(e_loc, y))
        local_losses.append(local_loss)
    # global block: layers L-1 and L, perturbation at L-1 only
    u = directions[L - 2]
    s = activate_prime(net.spec.hidden_activation, trace.pre[L - 2])
    d_out = net.weights[L - 1] @ u
    d = float(e @ d_out)
    grads.append(np.multiply.outer(d * u * s, trace.post[L - 2]))
    grads.append(_output_grad(e, trace))
    est = GradientEstimate(grads, loss, e, {"local_losses": local_losses, "directional": d})
    return est, head_grads


def _project(net: MlpState, matrices: list, trace, e: np.ndarray) -> list:
    grads = []
    for l, b in enumerate(matrices, start=1):
        s = activate_prime(net.spec.hidden_activation, trace.pre[l - 1])
        grads.append(np.multiply.outer((b.T @ e) * s, trace.post[l - 1]))
    grads.append(_output_grad(e, trace))
    return grads


def estimate_dfa(net: MlpState, feedback: FeedbackState, x, target: int) -> GradientEstimate:
    """Output error projected onto hidden layers through ``B^(l)``."""
    feedback.check(net.spec)
    trace = forward(net, x)
    loss, e = loss_and_error(trace.output, target)
    return GradientEstimate(_project(net, feedback.matrices, trace, e), loss, e)


FeedbackUpdate = Callable[[list, list], None]


def fdfa_step(net: MlpState, feedback: FeedbackState, x, target: int,
              rng: Optional[RngStream] = None, *, feedback_update: Optional[FeedbackUpdate] = None,
              directions: Optional[list] = None) -> GradientEstimate:
    """One FDFA iteration: refresh the feedback, then project the error.

    The activity tangent of the network *output* gives ``d^(L)``; each
    feedback matrix moves towards ``d^(L) outer v^(l)``.  By default this is
    the exponential average ``B <- (1 - alpha) B + alpha d outer v``.  When
    ``feedback_update`` is given it receives ``(matrices, grads)`` with
    ``grads[l] = B^(l) - d outer v^(l)`` and must update ``matrices`` in
    place (e.g. an Adam step with learning rate alpha).
    """
    if feedback.frozen:
        raise ValueError("fdfa_step needs learnable (non-frozen) feedback")
    feedback.check(net.spec)
    if directions is None:
        draw = draw_activity_perturbation(net.spec, rng)
    else:
        draw = PerturbationDraw("activity", activity=list(directions))
    trace, tan = forward_with_tangent(net, x, draw)
    loss, e = loss_and_error(trace.output, target)
    d_out = tan.output
    targets = [np.multiply.outer(d_out, v) for v in draw.activity]
    if feedback_update is None:
        a = feedback.alpha
        for b, t in zip(feedback.matrices, targets):
            b *= 1.0 - a
            b += a * t
    else:
        feedback_update(feedback.matrices, [b - t for b, t in zip(feedback.matrices, targets)])
    grads = _project(net, feedback.matrices, trace, e)
    return GradientEstimate(grads, loss, e, {"tangent": d_out, "directions": draw.activity})


def feedback_loss(feedback: FeedbackState, d_out: np.ndarray, directions: list) -> float:
    """Squared distance of every ``B^(l)`` to its target ``d^(L) outer v^(l)``."""
    if len(directions) != len(feedback.matrices):
        raise ShapeError("one direction per feedback matrix is required")
    total = 0.0
    for b, v in zip(feedback.matrices, directions):
        total += float(np.sum((b - np.multiply.outer(d_out, v)) ** 2))
    return total
