"""Experiment configuration and the four studies behind the command line.

Every runner returns its rows and, when ``cfg.out`` is set, writes them as
CSV.  The primary CSV depends only on the configuration and the seed, so
repeating a run reproduces it byte for byte.  Wall-clock times go to a
``<out>.timing.csv`` sidecar instead.

CSV headers
-----------
train:           run_id,seed,estimator,epoch,train_loss,test_accuracy
train timing:    run_id,epoch,wall_time
variance-scan:   run_id,seed,estimator,scan,kind,scan_value,measured_variance,closed_form_variance,stderr
alignment-scan:  run_id,seed,estimator,epoch,layer,angle_deg
noise-sweep:     run_id,seed,tag,sigma,normalized_variance,loss

In the variance scan, ``kind`` is ``point`` for a scan point and ``fit``
for the closing summary row, whose variance columns hold the fitted
log-log slopes and whose ``stderr`` holds the slope's standard error.
Undefined angles are written as ``nan``.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .core import RngStream, loglog_fit
from .data import Dataset, duplicate_inputs, load_bundled_mnist, split_and_shuffle, synthetic_gaussian
from .estimators import ESTIMATORS, estimate_bp, estimate_dfa, fdfa_feedback
from .metrics import (
    alignment,
    closed_form_variance_fdfa,
    closed_form_variance_fga,
    closed_form_variance_fgw,
    estimation_variance,
    make_sampler,
    variance_decomposition,
)
from .network import MlpSpec, MlpState, kaiming_bound
from .optim import OptimConfig
from .training import Learner, build_learner, dataset_loss, train

SCANS = ("alpha", "n1", "n0")
DATASETS = ("mnist", "synthetic")

# stream ids private to the measurement code
SCAN_INIT_STREAM = 11
SCAN_DRAW_STREAM = 12
NOISE_DRAW_STREAM = 13
DATA_STREAM = 14


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


def _floats(values) -> tuple:
    return tuple(float(v) for v in values)


def _ints(values) -> tuple:
    return tuple(int(v) for v in values)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run depends on.  Defaults follow the desk-scale settings."""

    estimator: str = "bp"
    widths: tuple = (784, 100, 10)
    optimizer: str = "adam"
    lr: float = 1e-4
    alpha: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    decay: float = 0.95
    epochs: int = 5
    dataset: str = "mnist"
    train_size: int = 10_000
    test_size: int = 2_000
    seed: int = 0
    # variance scan
    scan: str = "alpha"
    alphas: tuple = (1e-3, 3e-3, 1e-2, 3e-2, 1e-1)
    n1_values: tuple = (16, 32, 64, 128, 256)
    n0_factors: tuple = (1, 2, 4, 8)
    scan_n1: int = 32
    n_inputs: int = 8
    n_draws: int = 500
    # alignment scan
    align_batch: int = 500
    # noise sweep
    sigmas: tuple = (0.0, 0.01, 0.03, 0.1, 0.3)
    compare: tuple = ("fgw", "fga", "fdfa")
    out: Optional[str] = None

    def __post_init__(self):
        conv = {"widths": _ints, "alphas": _floats, "n1_values": _ints, "n0_factors": _ints,
                "sigmas": _floats, "compare": tuple}
        for name, fn in conv.items():
            object.__setattr__(self, name, fn(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        def bad(name, msg):
            raise ConfigError(f"{name}: {msg} (got {getattr(self, name)!r})")

        if self.estimator not in ESTIMATORS:
            bad("estimator", f"must be one of {', '.join(ESTIMATORS)}")
        if len(self.widths) < 2 or min(self.widths) < 1:
            bad("widths", "need at least two positive widths")
        if self.epochs < 1:
            bad("epochs", "must be >= 1")
        if self.dataset not in DATASETS:
            bad("dataset", f"must be one of {', '.join(DATASETS)}")
        if self.train_size < 1:
            bad("train_size", "must be >= 1")
        if self.test_size < 1:
            bad("test_size", "must be >= 1")
        if self.seed < 0:
            bad("seed", "must be >= 0")
        if self.scan not in SCANS:
            bad("scan", f"must be one of {', '.join(SCANS)}")
        for name in ("alphas", "n1_values", "n0_factors", "sigmas"):
            if not getattr(self, name):
                bad(name, "must not be empty")
        if any(not 0 < a <= 1 for a in self.alphas):
            bad("alphas", "every value must lie in (0, 1]")
        if min(self.n1_values) < 1 or min(self.n0_factors) < 1:
            bad("n1_values" if min(self.n1_values) < 1 else "n0_factors", "values must be >= 1")
        if min(self.sigmas) < 0:
            bad("sigmas", "values must be >= 0")
        if self.scan_n1 < 1:
            bad("scan_n1", "must be >= 1")
        if self.n_inputs < 1:
            bad("n_inputs", "must be >= 1")
        if self.n_draws < 2:
            bad("n_draws", "must be >= 2")
        if self.align_batch < 1:
            bad("align_batch", "must be >= 1")
        if any(c not in ESTIMATORS for c in self.compare):
            bad("compare", f"entries must be among {', '.join(ESTIMATORS)}")
        try:
            self.optim()
        except ValueError as exc:
            raise ConfigError(f"optimizer settings: {exc}") from None

    def optim(self) -> OptimConfig:
        return OptimConfig(self.optimizer, self.lr, self.alpha, self.beta1, self.beta2,
                           self.epsilon, self.decay)

    def spec(self) -> MlpSpec:
        return MlpSpec(self.widths)

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def canonical(self) -> str:
        """``key = value`` lines for every field except the output path."""
        lines = []
        for f in fields(self):
            if f.name == "out":
                continue
            lines.append(f"{f.name} = {_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def run_id(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:12]


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


_FIELD_TYPES = {f.name: f.default for f in fields(ExperimentConfig)}


def _parse_value(name: str, raw: str):
    default = _FIELD_TYPES[name]
    raw = raw.strip()
    try:
        if isinstance(default, tuple):
            parts = [p for p in raw.replace("-", ",").split(",")] if name == "widths" else raw.split(",")
            parts = [p.strip() for p in parts if p.strip()]
            if name in ("compare",):
                return tuple(parts)
            cast = float if name in ("alphas", "sigmas") else int
            return tuple(cast(p) for p in parts)
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw if raw.lower() not in ("", "none") else None
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


def parse_assignments(lines, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    values = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw)
    return values


def load_config(path=None, overrides=(), **fixed) -> ExperimentConfig:
    """Build a config from an optional file, then ``key=value`` overrides, then keywords."""
    values = {}
    if path is not None:
        with open(path, encoding="utf-8") as f:
            values.update(parse_assignments(f, str(path)))
    values.update(parse_assignments(overrides, "<override>"))
    values.update({k: v for k, v in fixed.items() if v is not None})
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------- output

def _cell(v) -> str:
    if v is None:
        return "nan"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(r[h]) for h in header])
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    Path(path).write_text(csv_text(header, rows), encoding="utf-8")


def timing_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".timing.csv")


TRAIN_HEADER = ("run_id", "seed", "estimator", "epoch", "train_loss", "test_accuracy")
TIMING_HEADER = ("run_id", "epoch", "wall_time")
SCAN_HEADER = ("run_id", "seed", "estimator", "scan", "kind", "scan_value",
               "measured_variance", "closed_form_variance", "stderr")
ALIGN_HEADER = ("run_id", "seed", "estimator", "epoch", "layer", "angle_deg")
NOISE_HEADER = ("run_id", "seed", "tag", "sigma", "normalized_variance", "loss")


# ---------------------------------------------------------------- data

def load_data(cfg: ExperimentConfig):
    """Training and test sets sized by the config, with inputs matching ``widths[0]``."""
    if cfg.dataset == "mnist":
        tr, te = load_bundled_mnist("train"), load_bundled_mnist("test")
        if cfg.train_size > len(tr) or cfg.test_size > len(te):
            raise ConfigError(f"train_size/test_size: bundled MNIST has {len(tr)}/{len(te)} samples")
        tr, te = tr.subset(cfg.train_size), te.subset(cfg.test_size)
    else:
        full = synthetic_gaussian(cfg.train_size + cfg.test_size, cfg.widths[0], cfg.widths[-1],
                                  RngStream(cfg.seed, DATA_STREAM))
        tr, te = split_and_shuffle(full, cfg.train_size / len(full), RngStream(cfg.seed, DATA_STREAM + 1))
    if tr.dim != cfg.widths[0]:
        raise ConfigError(f"widths: input width {cfg.widths[0]} != data dimension {tr.dim}")
    if tr.n_classes != cfg.widths[-1]:
        raise ConfigError(f"widths: output width {cfg.widths[-1]} != {tr.n_classes} classes")
    return tr, te


# ---------------------------------------------------------------- train

@dataclass
class TrainResult:
    rows: list
    timing: list
    learner: Learner = field(repr=False)


def run_train(cfg: ExperimentConfig) -> TrainResult:
    """Train ``cfg.estimator`` sample by sample and log loss and accuracy per epoch."""
    tr, te = load_data(cfg)
    learner = build_learner(cfg.estimator, cfg.spec(), cfg.optim(), cfg.seed)
    records = train(learner, tr, te, cfg.epochs, cfg.seed)
    rid = cfg.run_id()
    rows = [dict(run_id=rid, seed=cfg.seed, estimator=cfg.estimator, epoch=r.epoch,
                 train_loss=r.train_loss, test_accuracy=r.test_accuracy) for r in records]
    timing = [dict(run_id=rid, epoch=r.epoch, wall_time=r.wall_time) for r in records]
    if cfg.out:
        write_csv(cfg.out, TRAIN_HEADER, rows)
        write_csv(timing_path(cfg.out), TIMING_HEADER, timing)
    return TrainResult(rows, timing, learner)


# ---------------------------------------------------------------- variance scan

def _uniform_scaled(rng: RngStream, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, shape)


def scan_networks(cfg: ExperimentConfig):
    """The frozen networks and inputs of one scan, as ``(value, net, inputs)``.

    ``n1``: nested slices of one network of the largest width, every weight
    drawn with the Kaiming scale of that largest network, so each added
    hidden unit contributes on the same scale.
    ``n0``: each input is repeated ``k`` times and ``W^(1)`` is tiled ``k``
    times and divided by ``k``, which leaves the network function unchanged
    and isolates the input dimension.
    ``alpha``: a single network of ``cfg.widths``.
    """
    tr = load_bundled_mnist("train") if cfg.dataset == "mnist" else load_data(cfg)[0]
    base = tr.subset(cfg.n_inputs)
    n_out = cfg.widths[-1]
    rng = RngStream(cfg.seed, SCAN_INIT_STREAM)
    if cfg.scan == "alpha":
        if len(cfg.widths) != 3:
            raise ConfigError("widths: the alpha scan uses a 2-layer network")
        spec = cfg.spec()
        w1 = _uniform_scaled(rng, spec.weight_shape(1), kaiming_bound(spec.widths[0]))
        w2 = _uniform_scaled(rng, spec.weight_shape(2), kaiming_bound(spec.widths[1]))
        net = MlpState(spec, [w1, w2])
        return [(a, net, base) for a in cfg.alphas]
    if cfg.scan == "n1":
        n0, top = base.dim, max(cfg.n1_values)
        w1 = _uniform_scaled(rng, (top, n0), kaiming_bound(n0))
        w2 = _uniform_scaled(rng, (n_out, top), kaiming_bound(top))
        return [(n1, MlpState(MlpSpec((n0, n1, n_out)), [w1[:n1].copy(), w2[:, :n1].copy()]), base)
                for n1 in cfg.n1_values]
    n0, n1 = base.dim, cfg.scan_n1
    w1 = _uniform_scaled(rng, (n1, n0), kaiming_bound(n0))
    w2 = _uniform_scaled(rng, (n_out, n1), kaiming_bound(n1))
    out = []
    for k in cfg.n0_factors:
        net = MlpState(MlpSpec((n0 * k, n1, n_out)), [np.tile(w1, (1, k)) / k, w2.copy()])
        out.append((k, net, duplicate_inputs(base, k)))
    return out


def _scan_estimator(cfg: ExperimentConfig) -> str:
    allowed = ("fdfa",) if cfg.scan == "alpha" else ("fgw", "fga")
    if cfg.estimator not in allowed:
        raise ConfigError(f"estimator: the {cfg.scan} scan supports {', '.join(allowed)}")
    return cfg.estimator


def scan_point(cfg: ExperimentConfig, value, net: MlpState, inputs: Dataset):
    """Measured and predicted mean per-weight variance of the ``W^(1)`` estimates.

    Both are averaged over the scan inputs.  Every scan point reuses the
    same draw stream, so differences between points are not Monte-Carlo
    noise of independent runs.
    """
    kind = _scan_estimator(cfg)
    feedback = None
    if kind == "fdfa":
        feedback = fdfa_feedback(net.spec, value)
        feedback.matrices[0][...] = net.weights[1]
        sampler = make_sampler("fdfa", net, feedback=feedback)
    else:
        sampler = make_sampler(kind, net, perturb_output=False)
    rng = RngStream(cfg.seed, SCAN_DRAW_STREAM)
    measured, predicted = [], []
    for x, t in zip(inputs.inputs, inputs.labels):
        res = estimation_variance(sampler, x, int(t), cfg.n_draws, rng)
        measured.append(float(res.per_layer[0].mean()))
        if kind == "fgw":
            cf = closed_form_variance_fgw(net, x, int(t))
        elif kind == "fga":
            cf = closed_form_variance_fga(net, x, int(t))
        else:
            cf = closed_form_variance_fdfa(net, x, int(t), value)
        predicted.append(float(cf.mean()))
    return float(np.mean(measured)), float(np.mean(predicted))


def run_variance_scan(cfg: ExperimentConfig) -> list:
    """Variance of the first-layer estimates across a scan, plus a log-log fit row."""
    _scan_estimator(cfg)
    rid = cfg.run_id()
    rows, meas_pts, cf_pts = [], [], []
    for value, net, inputs in scan_networks(cfg):
        m, c = scan_point(cfg, value, net, inputs)
        rows.append(dict(run_id=rid, seed=cfg.seed, estimator=cfg.estimator, scan=cfg.scan, kind="point",
                         scan_value=value, measured_variance=m, closed_form_variance=c, stderr=""))
        meas_pts.append((value, m))
        cf_pts.append((value, c))
    if len(rows) >= 2:
        fm, fc = loglog_fit(meas_pts), loglog_fit(cf_pts)
        rows.append(dict(run_id=rid, seed=cfg.seed, estimator=cfg.estimator, scan=cfg.scan, kind="fit",
                         scan_value="", measured_variance=fm.slope, closed_form_variance=fc.slope,
                         stderr=fm.stderr_slope))
    if cfg.out:
        write_csv(cfg.out, SCAN_HEADER, rows)
    return rows


# ---------------------------------------------------------------- alignment scan

def averaged_alignment(learner: Learner, batch: Dataset) -> list:
    """Angle per layer between batch-averaged estimator and BP gradients.

    The estimator gradient is the error projected through the current
    feedback matrices (for FDFA, without refreshing them), so the probe
    leaves the learner untouched.
    """
    net = learner.net
    est = [np.zeros_like(w) for w in net.weights]
    tru = [np.zeros_like(w) for w in net.weights]
    for x, t in zip(batch.inputs, batch.labels):
        for acc, g in ((est, estimate_dfa(net, learner.feedback, x, int(t)).grads),
                       (tru, estimate_bp(net, x, int(t)).grads)):
            for a, gl in zip(acc, g):
                a += gl
    return alignment(est, tru).angles


def run_alignment_scan(cfg: ExperimentConfig) -> list:
    """Gradient alignment with BP for DFA or FDFA, before training and after every epoch."""
    if cfg.estimator not in ("dfa", "fdfa"):
        raise ConfigError("estimator: the alignment scan supports dfa and fdfa")
    tr, te = load_data(cfg)
    batch = te.subset(min(cfg.align_batch, len(te)))
    learner = build_learner(cfg.estimator, cfg.spec(), cfg.optim(), cfg.seed)
    rid = cfg.run_id()
    rows = []

    def record(epoch):
        for layer, angle in enumerate(averaged_alignment(learner, batch), start=1):
            rows.append(dict(run_id=rid, seed=cfg.seed, estimator=cfg.estimator, epoch=epoch,
                             layer=layer, angle_deg=angle))

    record(0)
    train(learner, tr, te, cfg.epochs, cfg.seed, on_epoch=lambda lrn, rec: record(rec.epoch))
    if cfg.out:
        write_csv(cfg.out, ALIGN_HEADER, rows)
    return rows


# ---------------------------------------------------------------- noise sweep

def _normalized_variance(cfg: ExperimentConfig, learner: Learner, sigma: float, batch: Dataset) -> float:
    sampler = make_sampler(learner.method, learner.net, feedback=learner.feedback,
                           heads=learner.heads, sigma=sigma)
    rep = variance_decomposition(sampler, list(batch.inputs), [int(t) for t in batch.labels],
                                 cfg.n_draws, RngStream(cfg.seed, NOISE_DRAW_STREAM))
    return rep.normalized


def noise_point(cfg: ExperimentConfig, method: str, sigma: float, tr: Dataset, te: Dataset) -> tuple:
    """Normalized variance at initialisation and training loss after one epoch."""
    learner = build_learner(method, cfg.spec(), cfg.optim(), cfg.seed, sigma=sigma)
    var = _normalized_variance(cfg, learner, sigma, tr.subset(cfg.n_inputs))
    train(learner, tr, te, 1, cfg.seed)
    return var, dataset_loss(learner.net, tr)


def run_noise_sweep(cfg: ExperimentConfig) -> list:
    """One epoch of BP with Gaussian gradient noise per sigma, then the compared estimators."""
    tr, te = load_data(cfg)
    rid = cfg.run_id()
    rows = []
    for sigma in cfg.sigmas:
        var, loss = noise_point(cfg, "noisy_bp", sigma, tr, te)
        rows.append(dict(run_id=rid, seed=cfg.seed, tag="noisy_bp", sigma=sigma,
                         normalized_variance=var, loss=loss))
    for method in cfg.compare:
        var, loss = noise_point(cfg, method, 0.0, tr, te)
        rows.append(dict(run_id=rid, seed=cfg.seed, tag=method, sigma="",
                         normalized_variance=var, loss=loss))
    if cfg.out:
        write_csv(cfg.out, NOISE_HEADER, rows)
    return rows
