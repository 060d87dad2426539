"""Per-sample training loop shared by the experiment runners."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import RngStream
from .data import Dataset
from .estimators import (
    ESTIMATORS,
    FeedbackState,
    LocalHeads,
    dfa_feedback,
    estimate_bp,
    estimate_dfa,
    estimate_fga,
    estimate_fgw,
    estimate_lgfga,
    fdfa_feedback,
    fdfa_step,
    init_local_heads,
)
from .metrics import noisy_bp
from .network import GradientEstimate, MlpSpec, MlpState, kaiming_uniform_init, mean_loss, predict, zeros_init
from .optim import OptimConfig, Optimizer, decay_lr

# stream ids, so that changing one consumer never shifts another's draws
INIT_STREAM = 1
FEEDBACK_STREAM = 2
HEADS_STREAM = 3
SHUFFLE_STREAM = 4
PERTURB_STREAM = 5


@dataclass
class Learner:
    """A network plus everything one estimator needs to train it."""

    method: str
    net: MlpState
    cfg: OptimConfig
    feedback: Optional[FeedbackState] = None
    heads: Optional[LocalHeads] = None
    sigma: float = 0.0
    epoch: int = 0
    _opt: Optimizer = field(init=False, repr=False)
    _fb_opt: Optional[Optimizer] = field(init=False, default=None, repr=False)
    _head_opt: Optional[Optimizer] = field(init=False, default=None, repr=False)

    def __post_init__(self):
        if self.method not in ESTIMATORS + ("noisy_bp",):
            raise ValueError(f"unknown estimator {self.method!r}")
        self._opt = Optimizer(self.cfg, self.net.weights)
        if self.method == "fdfa":
            self._fb_opt = Optimizer(self.cfg, self.feedback.matrices)
        if self.method == "lgfga" and self.heads is not None and self.heads.matrices:
            self._head_opt = Optimizer(self.cfg, self.heads.matrices)

    @property
    def lr(self) -> float:
        return decay_lr(self.cfg, self.epoch)

    @property
    def feedback_lr(self) -> float:
        return decay_lr(self.cfg, self.epoch, base=self.cfg.alpha)

    def _feedback_update(self, matrices, grads):
        self._fb_opt.step(grads, self.feedback_lr)

    def estimate(self, x, target: int, rng: RngStream) -> GradientEstimate:
        m = self.method
        if m == "bp":
            return estimate_bp(self.net, x, target)
        if m == "fgw":
            return estimate_fgw(self.net, x, target, rng)
        if m == "fga":
            return estimate_fga(self.net, x, target, rng)
        if m == "lgfga":
            est, head_grads = estimate_lgfga(self.net, self.heads, x, target, rng)
            if self._head_opt is not None:
                self._head_opt.step(head_grads, self.lr)
            return est
        if m == "dfa":
            return estimate_dfa(self.net, self.feedback, x, target)
        if m == "fdfa":
            return fdfa_step(self.net, self.feedback, x, target, rng, feedback_update=self._feedback_update)
        return noisy_bp(self.net, x, target, self.sigma, rng)

    def step(self, x, target: int, rng: RngStream) -> float:
        est = self.estimate(x, target, rng)
        self._opt.step(est.grads, self.lr)
        return est.loss


def build_learner(method: str, spec: MlpSpec, cfg: OptimConfig, seed: int, *, sigma: float = 0.0) -> Learner:
    """Initialise a learner the way the experimental settings prescribe.

    Forward weights are uniform-Kaiming except for DFA, whose forward weights
    start at zero with fixed uniform-Kaiming feedback.  FDFA feedback starts
    at zero.  LG-FG-A read-out heads are uniform-Kaiming.
    """
    feedback = heads = None
    if method == "dfa":
        net = zeros_init(spec)
        feedback = dfa_feedback(spec, RngStream(seed, FEEDBACK_STREAM))
    else:
        net = kaiming_uniform_init(spec, RngStream(seed, INIT_STREAM))
    if method == "fdfa":
        feedback = fdfa_feedback(spec, cfg.alpha)
    if method == "lgfga":
        heads = init_local_heads(spec, RngStream(seed, HEADS_STREAM))
    return Learner(method, net, cfg, feedback, heads, sigma)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_accuracy: float
    wall_time: float


def accuracy(net: MlpState, ds: Dataset) -> float:
    return float(np.mean(predict(net, ds.inputs) == ds.labels))


def train(learner: Learner, train_set: Dataset, test_set: Dataset, epochs: int, seed: int,
          on_epoch: Optional[Callable[[Learner, EpochRecord], None]] = None) -> list:
    """Run ``epochs`` passes of per-sample updates over one seeded shuffle.

    ``train_loss`` is the mean loss of the samples seen during the epoch,
    each taken before its own update.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    order = RngStream(seed, SHUFFLE_STREAM).permutation(len(train_set))
    rng = RngStream(seed, PERTURB_STREAM)
    records = []
    for epoch in range(epochs):
        learner.epoch = epoch
        t0 = time.perf_counter()
        total = 0.0
        for i in order:
            total += learner.step(train_set.inputs[i], int(train_set.labels[i]), rng)
        rec = EpochRecord(epoch + 1, total / len(order), accuracy(learner.net, test_set),
                          time.perf_counter() - t0)
        records.append(rec)
        if on_epoch is not None:
            on_epoch(learner, rec)
    learner.epoch = epochs
    return records


def dataset_loss(net: MlpState, ds: Dataset) -> float:
    return mean_loss(net, ds.inputs, ds.labels)
