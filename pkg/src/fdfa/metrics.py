"""Measurement instruments: estimation variance, its data/estimation split,
closed-form variance predictions, gradient alignment and noisy BP.

All of them treat the network (and any feedback state) as frozen.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .core import RngStream, ShapeError
from .estimators import (
    FeedbackState,
    LocalHeads,
    estimate_bp,
    estimate_dfa,
    estimate_fga,
    estimate_fgw,
    estimate_lgfga,
    fdfa_step,
)
from .network import (
    GradientEstimate,
    MlpState,
    activate_prime,
    activation_gradients,
    backprop,
    forward,
    loss_and_error,
)


class Sampler:
    """A gradient estimator bound to a frozen network (and its extra state).

    Calling it with ``(x, target, rng)`` returns one :class:`GradientEstimate`.
    Forward-gradient samplers also run through the vectorised/compiled
    moment kernel when used by :func:`estimation_variance`.
    """

    def __init__(self, kind: str, net: MlpState, fn: Callable, *, deterministic: bool = False,
                 perturb_output: bool = True):
        self.kind = kind
        self.net = net
        self._fn = fn
        self.deterministic = deterministic
        self.perturb_output = perturb_output

    def __call__(self, x, target: int, rng: Optional[RngStream] = None) -> GradientEstimate:
        return self._fn(x, target, rng)

    def __repr__(self) -> str:
        return f"Sampler({self.kind!r})"

    @property
    def has_kernel(self) -> bool:
        return self.kind in ("fgw", "fga")


def make_sampler(kind: str, net: MlpState, *, feedback: Optional[FeedbackState] = None,
                 heads: Optional[LocalHeads] = None, perturb_output: bool = True,
                 sigma: float = 0.0, feedback_update=None) -> Sampler:
    """Bind an estimator to a frozen state.

    For ``fdfa`` every call works on a private copy of ``feedback``, so each
    draw is the single-step estimate taken from the same feedback matrices.
    """
    if kind == "bp":
        return Sampler(kind, net, lambda x, t, rng: estimate_bp(net, x, t), deterministic=True)
    if kind == "dfa":
        if feedback is None:
            raise ValueError("dfa sampler needs feedback matrices")
        return Sampler(kind, net, lambda x, t, rng: estimate_dfa(net, feedback, x, t), deterministic=True)
    if kind == "fgw":
        return Sampler(kind, net, lambda x, t, rng: estimate_fgw(net, x, t, rng, perturb_output=perturb_output),
                       perturb_output=perturb_output)
    if kind == "fga":
        return Sampler(kind, net, lambda x, t, rng: estimate_fga(net, x, t, rng), perturb_output=False)
    if kind == "lgfga":
        if heads is None:
            raise ValueError("lgfga sampler needs local heads")
        return Sampler(kind, net, lambda x, t, rng: estimate_lgfga(net, heads, x, t, rng)[0])
    if kind == "fdfa":
        if feedback is None:
            raise ValueError("fdfa sampler needs feedback matrices")

        def fn(x, t, rng):
            return fdfa_step(net, feedback.copy(), x, t, rng, feedback_update=feedback_update)
        return Sampler(kind, net, fn)
    if kind == "noisy_bp":
        return Sampler(kind, net, lambda x, t, rng: noisy_bp(net, x, t, sigma, rng),
                       deterministic=sigma == 0.0)
    raise ValueError(f"unknown sampler kind {kind!r}")


@dataclass
class DrawMoments:
    """Per-coordinate moments of an estimator over perturbation draws at one input."""

    mean: list
    variance: list
    n_draws: int
    mean_sq_norm: float

    @property
    def total(self) -> float:
        return float(sum(v.sum() for v in self.variance))

    def flat_variance(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.variance])


class _ShiftedAccumulator:
    """Shifted, compensated running sums; constant data give exactly zero variance."""

    def __init__(self, shift: np.ndarray):
        self.shift = np.ascontiguousarray(shift, dtype=np.float64)
        self.s1 = np.zeros_like(self.shift)
        self.c1 = np.zeros_like(self.shift)
        self.s2 = np.zeros_like(self.shift)
        self.c2 = np.zeros_like(self.shift)
        self.n = 0

    def add(self, g: np.ndarray) -> None:
        diff = g - self.shift
        for acc, comp, val in ((self.s1, self.c1, diff), (self.s2, self.c2, diff * diff)):
            y = val - comp
            t = acc + y
            comp[...] = (t - acc) - y
            acc[...] = t
        self.n += 1

    def mean(self) -> np.ndarray:
        return self.shift + self.s1 / self.n

    def variance(self) -> np.ndarray:
        if self.n < 2:
            return np.zeros_like(self.shift)
        var = (self.s2 - self.s1 * self.s1 / self.n) / (self.n - 1)
        return np.maximum(var, 0.0)

    def mean_sq_norm(self) -> float:
        # E||g||^2 = sum over coordinates of (shift + diff)^2, expanded in the sums
        return float(np.sum(self.shift ** 2 + 2.0 * self.shift * self.s1 / self.n + self.s2 / self.n))


def _split(flat: np.ndarray, net: MlpState) -> list:
    out, off = [], 0
    for w in net.weights:
        out.append(flat[off:off + w.size].reshape(w.shape))
        off += w.size
    return out


def draw_moments(sampler: Sampler, x, target: int, n_draws: int, rng: Optional[RngStream] = None,
                 *, use_kernel: bool = True, chunk: int = 65536) -> DrawMoments:
    """Mean and unbiased variance of every gradient coordinate over ``n_draws`` draws."""
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    net = sampler.net
    first = sampler(x, target, rng)
    acc = _ShiftedAccumulator(first.flat())
    acc.n = 1
    remaining = n_draws - 1
    if sampler.deterministic:
        # identical draws contribute nothing to the shifted sums
        acc.n += remaining
    elif use_kernel and sampler.has_kernel and remaining > 0:
        trace = forward(net, x)
        _, e = loss_and_error(trace.output, target)
        spec = net.spec
        L = spec.depth
        widths = np.asarray(spec.widths, dtype=np.int64)
        wflat = np.concatenate([w.ravel() for w in net.weights])
        yflat = np.concatenate(trace.post[:L])
        sflat = np.concatenate([activate_prime(spec.activation(l), trace.pre[l - 1]) for l in range(1, L + 1)])
        if sampler.kind == "fgw":
            mode = 0
            width = sum(w.size for w in net.weights[:L - 1])
            if sampler.perturb_output:
                width += net.weights[-1].size
        else:
            mode = 1
            width = sum(spec.widths[1:L])
        while remaining > 0:
            n = min(chunk, remaining)
            noise = np.ascontiguousarray(rng.normal((n, width)))
            kernels.fg_moments(mode, widths, wflat, yflat, sflat, e, noise, sampler.perturb_output,
                               acc.shift, acc.s1, acc.c1, acc.s2, acc.c2)
            acc.n += n
            remaining -= n
    else:
        for _ in range(remaining):
            acc.add(sampler(x, target, rng).flat())
    return DrawMoments(_split(acc.mean(), net), _split(acc.variance(), net), acc.n, acc.mean_sq_norm())


@dataclass
class VarianceResult:
    per_layer: list
    total: float
    n_draws: int

    @property
    def mean_per_weight(self) -> float:
        return self.total / sum(v.size for v in self.per_layer)


def estimation_variance(sampler: Sampler, x, target: int, n_draws: int,
                        rng: Optional[RngStream] = None, **kw) -> VarianceResult:
    """Unbiased per-entry variance over perturbation draws at a fixed input."""
    if n_draws < 2:
        raise ValueError("n_draws must be >= 2")
    m = draw_moments(sampler, x, target, n_draws, rng, **kw)
    return VarianceResult(m.variance, m.total, m.n_draws)


@dataclass
class VarianceReport:
    """Variance split: ``z1`` from data sampling, ``z2`` from estimation.

    ``z1``, ``z2`` and ``total`` are summed over every coordinate;
    ``layer_z1``/``layer_z2`` are per-layer sums; ``coord_*`` hold the
    designated coordinate.  ``normalized`` divides ``total`` by the
    whole-network expected squared norm of the estimates.
    """

    z1: float
    z2: float
    total: float
    normalized: float
    n_samples: int
    n_draws: int
    coordinate: tuple
    coord_z1: float
    coord_z2: float
    layer_z1: list = field(default_factory=list)
    layer_z2: list = field(default_factory=list)
    z2_map: list = field(default_factory=list)


def variance_decomposition(sampler: Sampler, inputs: Sequence, targets: Sequence[int],
                           n_draws: int, rng: Optional[RngStream] = None, *,
                           coordinate: tuple = (0, 0, 0), **kw) -> VarianceReport:
    """Split estimate variance into data (``z1``) and estimation (``z2``) parts.

    ``z1`` is the variance over inputs of the per-input mean estimate
    (population form over the given slice); ``z2`` is the mean over inputs
    of the per-input unbiased variance.  ``total`` is the pooled population
    variance over all (input, draw) pairs.
    """
    if len(inputs) != len(targets) or len(inputs) < 1:
        raise ValueError("need matching, non-empty inputs and targets")
    moments = [draw_moments(sampler, x, t, n_draws, rng, **kw) for x, t in zip(inputs, targets)]
    L = sampler.net.depth
    n = len(moments)
    means = [np.stack([m.mean[l] for m in moments]) for l in range(L)]
    varis = [np.stack([m.variance[l] for m in moments]) for l in range(L)]
    z1_map = [mu.var(axis=0) for mu in means]
    z2_map = [v.mean(axis=0) for v in varis]
    m_draws = moments[0].n_draws
    pop = (m_draws - 1) / m_draws if m_draws > 1 else 0.0
    total = sum(float(z1.sum()) + pop * float(z2.sum()) for z1, z2 in zip(z1_map, z2_map))
    msq = float(np.mean([m.mean_sq_norm for m in moments]))
    layer, i, j = coordinate
    return VarianceReport(
        z1=float(sum(z.sum() for z in z1_map)),
        z2=float(sum(z.sum() for z in z2_map)),
        total=total,
        normalized=total / msq if msq > 0 else 0.0,
        n_samples=n,
        n_draws=m_draws,
        coordinate=tuple(coordinate),
        coord_z1=float(z1_map[layer][i, j]),
        coord_z2=float(z2_map[layer][i, j]),
        layer_z1=[float(z.sum()) for z in z1_map],
        layer_z2=[float(z.sum()) for z in z2_map],
        z2_map=z2_map,
    )


def _two_layer(net: MlpState) -> None:
    if net.depth != 2:
        raise ValueError(f"closed-form variances are stated for 2-layer networks, got depth {net.depth}")


def closed_form_variance_fgw(net: MlpState, x, target: int) -> np.ndarray:
    """Predicted per-weight variance of weight-perturbed estimates of ``W^(1)``.

    ``(dL/dw_ij)^2 + ||dL/dW^(1)||^2``, output-layer perturbation zero.
    """
    _two_layer(net)
    g = backprop(net, x, target).grads[0]
    return g * g + np.sum(g * g)


def closed_form_variance_fga(net: MlpState, x, target: int) -> np.ndarray:
    """Predicted per-weight variance of activity-perturbed estimates of ``W^(1)``.

    ``[(dL/dy_i)^2 + ||dL/dy^(1)||^2] (dy_i/dw_ij)^2`` with
    ``dy_i/dw_ij = sigma'(a_i) x_j``.
    """
    _two_layer(net)
    trace = forward(net, x)
    _, e = loss_and_error(trace.output, target)
    dy = activation_gradients(net, trace, e)[0]
    local = np.multiply.outer(activate_prime(net.spec.hidden_activation, trace.pre[0]), trace.post[0])
    return (dy * dy + np.sum(dy * dy))[:, None] * local * local


def closed_form_variance_fdfa(net: MlpState, x, target: int, alpha: float) -> np.ndarray:
    """Predicted per-weight variance of single-step FDFA estimates of ``W^(1)``.

    With a linear output layer the random part of the refreshed feedback is
    ``alpha d^(L) outer v``, whose projection of the error reproduces the
    activity-perturbed estimate scaled by ``alpha``.  The prediction is
    therefore ``alpha^2`` times the FG-A one, whatever the current feedback.
    """
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * alpha * closed_form_variance_fga(net, x, target)


@dataclass
class AlignmentReport:
    """Per-layer angle in degrees; ``None`` where either gradient is zero."""

    angles: list

    def defined(self) -> list:
        return [a for a in self.angles if a is not None]


def angle_between(a: np.ndarray, b: np.ndarray) -> Optional[float]:
    a = np.ravel(a)
    b = np.ravel(b)
    if a.shape != b.shape:
        raise ShapeError(f"cannot compare gradients of shape {a.shape} and {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return None
    ua, ub = a / na, b / nb
    # half-angle form keeps full precision near 0 and 180 degrees, unlike acos
    return math.degrees(2.0 * math.atan2(np.linalg.norm(ua - ub), np.linalg.norm(ua + ub)))


def alignment(estimate, truth) -> AlignmentReport:
    """Angle between an estimate and the true gradient, layer by layer.

    Accepts :class:`GradientEstimate` objects or plain lists of matrices.
    """
    est = estimate.grads if isinstance(estimate, GradientEstimate) else estimate
    tru = truth.grads if isinstance(truth, GradientEstimate) else truth
    if len(est) != len(tru):
        raise ShapeError(f"{len(est)} estimated layers vs {len(tru)} true layers")
    return AlignmentReport([angle_between(a, b) for a, b in zip(est, tru)])


def noisy_bp(net: MlpState, x, target: int, sigma: float, rng: Optional[RngStream] = None) -> GradientEstimate:
    """BP gradient plus i.i.d. ``N(0, sigma^2)`` noise on every entry."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    est = backprop(net, x, target)
    if sigma > 0:
        est.grads = [g + sigma * rng.normal(g.shape) for g in est.grads]
    return est
