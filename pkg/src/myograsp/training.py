"""Losses, Adam optimizer, early stopping and the training loop.

Training minimises MSE on the predicted angles; when adversarial domain
adaptation is active the softmax cross-entropy of the domain discriminator
is added (scaled by ``disc_loss_weight``) and its gradient reaches the
feature extractor through the gradient reversal layer.  Validation NRMSE
drives early stopping: training halts after ``patience`` epochs without
strict improvement, and the parameters from the best validation epoch are
returned.

Angle targets are standardised per angle during training when
``target_stats`` is supplied (the pipeline always does): raw targets sit at
tens of degrees, and without rescaling the squared-error loss dwarfs the
discriminator cross-entropy, leaving the adversarial term inert.  The
network then predicts in standardised units; validation metrics and
downstream evaluation invert the transform, so every reported RMSE/NRMSE
stays in degrees.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .metrics import angle_ranges, nrmse, rmse
from .network import Network
from .numerics import make_rng

log = logging.getLogger("myograsp.training")

__all__ = [
    "TrainConfig",
    "AdamState",
    "TrainReport",
    "EpochStats",
    "ArraySource",
    "TargetStats",
    "mse_loss",
    "cross_entropy_loss",
    "cross_entropy_batch",
    "adam_step",
    "EarlyStopper",
    "train",
    "predict",
]


@dataclass
class TargetStats:
    """Per-angle mean/std of the training targets; predictions invert it."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, targets: np.ndarray) -> "TargetStats":
        t = np.asarray(targets, dtype=np.float64)
        std = t.std(axis=0)
        return cls(mean=t.mean(axis=0), std=np.where(std == 0, 1.0, std))

    def normalize(self, y: np.ndarray) -> np.ndarray:
        return (y - self.mean) / self.std

    def denormalize(self, y: np.ndarray) -> np.ndarray:
        return y * self.std + self.mean


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    max_epochs: int = 30
    patience: int = 8
    batch_size: int = 64
    disc_loss_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.patience > self.max_epochs:
            raise ValueError("patience must be <= max_epochs")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over all entries; returns (scalar, gradient).

    Gradient is 2*(pred - target)/n with n the total entry count, i.e. the
    exact derivative of the returned mean.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff ** 2))
    grad = 2.0 * diff / diff.size
    return loss, grad


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy_loss(logits: np.ndarray, label: int):
    """Softmax cross-entropy for one logits vector; returns (scalar, gradient)."""
    logits = np.asarray(logits, dtype=np.float64).ravel()
    label = int(label)
    if not 0 <= label < logits.size:
        raise ValueError(f"label {label} out of range for {logits.size} domains")
    logp = _log_softmax(logits)
    grad = np.exp(logp)
    grad[label] -= 1.0
    return float(-logp[label]), grad


def cross_entropy_batch(logits: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy over a batch; gradient already carries 1/B."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    B, D = logits.shape
    if labels.shape != (B,):
        raise ValueError(f"labels shape {labels.shape} != ({B},)")
    if labels.min() < 0 or labels.max() >= D:
        raise ValueError(f"domain label out of range [0, {D})")
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(B), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(B), labels] -= 1.0
    return loss, grad / B


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads: dict, state: AdamState, lr: float):
    """One bias-corrected Adam update, in place on the parameter arrays.

    ``params`` is an iterable of (name, array) pairs; ``grads`` maps the same
    names to gradient arrays.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params:
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} != param {p.shape} for {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# early stopping
# ---------------------------------------------------------------------------

class EarlyStopper:
    """Stop after ``patience`` epochs without strict improvement.

    Ties do not reset patience; any decrease counts as improvement.
    """

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record this epoch's validation value; returns True when to stop."""
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


# ---------------------------------------------------------------------------
# data access
# ---------------------------------------------------------------------------

class ArraySource:
    """In-memory batch source over (windows, targets[, domains]) arrays."""

    def __init__(self, x: np.ndarray, y: np.ndarray, domains=None):
        self.x = np.asarray(x, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        self.domains = None if domains is None else np.asarray(domains, dtype=np.int64)
        if len(self.x) != len(self.y):
            raise ValueError("windows and targets disagree in length")

    def __len__(self):
        return len(self.x)

    def batch(self, idx: np.ndarray):
        d = None if self.domains is None else self.domains[idx]
        return self.x[idx], self.y[idx], d


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_rmse: float
    val_nrmse: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    stopping_epoch: int = 0
    best_epoch: int = 0
    best_val_nrmse: float = np.inf

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,train_loss,val_rmse,val_nrmse,seconds\n")
            for e in self.epochs:
                fh.write(f"{e.epoch},{e.train_loss:.10g},{e.val_rmse:.10g},"
                         f"{e.val_nrmse:.10g},{e.seconds:.3f}\n")


def predict(net: Network, x: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Batched inference over (N, T, C) windows; returns (N, angles)."""
    outs = []
    for lo in range(0, len(x), chunk):
        angles, _, _ = net.forward(x[lo:lo + chunk])
        outs.append(angles)
    return np.concatenate(outs, axis=0)


def _validation_metrics(net: Network, source, target_stats) -> tuple[float, float]:
    xs, ys, _ = source.batch(np.arange(len(source)))
    preds = predict(net, xs)
    if target_stats is not None:
        preds = target_stats.denormalize(preds)
    ranges = angle_ranges(ys, clamp_zero=True)
    return rmse(preds, ys), nrmse(preds, ys, ranges)


def train(net: Network, train_source, val_source, config: TrainConfig,
          target_stats: TargetStats | None = None):
    """Mini-batch training with seeded shuffling and early stopping.

    Returns (net, TrainReport) with the network holding the parameters of
    the best validation epoch.  When the network carries a discriminator and
    ``disc_loss_weight`` > 0, every training batch must provide domain
    labels; total loss is mse + disc_loss_weight * cross_entropy.  With
    ``target_stats`` the regression loss runs on standardised targets while
    the reported validation metrics stay in raw angle units.
    """
    if len(train_source) == 0:
        raise ValueError("empty training set")
    ada_active = (net.config.use_discriminator and config.disc_loss_weight > 0.0)

    shuffle_rng = make_rng(config.seed)
    state = AdamState()
    params = net.named_params()
    report = TrainReport()
    stopper = EarlyStopper(config.patience)
    best_params = net.copy_params()

    n = len(train_source)
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            x, y, domains = train_source.batch(idx)
            if target_stats is not None:
                y = target_stats.normalize(y)
            angles, logits, trace = net.forward(x)
            loss, dangles = mse_loss(angles, y)
            ddomains = None
            if ada_active:
                if domains is None:
                    raise ValueError("ADA training needs a domain label on every sample")
                ce, dlogits = cross_entropy_batch(logits, domains)
                loss = loss + config.disc_loss_weight * ce
                ddomains = config.disc_loss_weight * dlogits
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch}, batch {lo // config.batch_size}")
            grads = net.backward(trace, dangles, ddomains)
            adam_step(params, grads, state, config.learning_rate)
            total += loss * len(idx)

        val_rmse, val_nrmse = _validation_metrics(net, val_source, target_stats)
        seconds = time.perf_counter() - t0
        report.epochs.append(EpochStats(epoch, total / n, val_rmse, val_nrmse, seconds))
        log.info("epoch %d: train_loss=%.5f val_rmse=%.4f val_nrmse=%.4f (%.1fs)",
                 epoch, total / n, val_rmse, val_nrmse, seconds)

        improved = val_nrmse < stopper.best
        stop = stopper.update(epoch, val_nrmse)
        if improved:
            best_params = net.copy_params()
        report.stopping_epoch = epoch
        if stop:
            break

    report.best_epoch = stopper.best_epoch
    report.best_val_nrmse = stopper.best
    net.set_params(best_params)
    return net, report
