"""Minibatch SGD with learning-rate grids, geometric decay and early stopping.

One trainer serves both model families. Feed-forward models shuffle and batch
individual (pre-windowed) frames; recurrent models shuffle utterances and
group them until a batch holds at least `minibatch_size` frames, so the
gradient is always d(mean per-frame cross-entropy)/d(params) at the same
scale. The dev-set selection metric is cross-entropy against the training
targets (hard or soft); frame error rate is tracked alongside. Training stops
once the dev metric has failed to improve for `patience` consecutive epochs
and returns the parameters of the best dev epoch.
"""

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers
from .distillation import SparseTargets, batch_cross_entropy_sum, batch_logit_gradient
from .errors import ConfigError, DataError, NumericError, TrainingDivergedError
from .numeric import as_f64, log_softmax
from .seeding import substream

HARD = "hard"
SOFT = "soft"


@dataclass(frozen=True)
class Schedule:
    """Constant rate, or geometric decay rate * factor**epoch (per-epoch)."""

    kind: str
    rate: float
    factor: float = 0.5

    def __post_init__(self):
        if self.kind not in ("constant", "geometric"):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        # rate 0 is allowed: it must be an exact null update
        if self.rate < 0:
            raise ConfigError(f"learning rate must be non-negative, got {self.rate}")
        if self.kind == "geometric" and not 0 < self.factor < 1:
            raise ConfigError(f"decay factor must be in (0, 1), got {self.factor}")

    def rate_at(self, epoch):
        if self.kind == "constant":
            return self.rate
        return self.rate * self.factor**epoch

    def describe(self):
        if self.kind == "constant":
            return f"constant({self.rate:g})"
        return f"geometric({self.rate:g}x{self.factor:g})"


@dataclass(frozen=True)
class TrainConfig:
    schedule: Schedule
    minibatch_size: int = 128
    max_epochs: int = 20
    patience: int = 1
    seed: int = 0
    target_kind: str = HARD

    def __post_init__(self):
        if self.minibatch_size < 1:
            raise ConfigError("minibatch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.target_kind not in (HARD, SOFT):
            raise ConfigError(f"target_kind must be 'hard' or 'soft', got {self.target_kind!r}")


def default_sweep_grid(seed=0, minibatch_size=128, max_epochs=20, patience=1,
                       target_kind=HARD):
    """The stock learning-rate grid: constants 0.1, 0.01, 0.001 and geometric
    decays from 0.1 and 0.01 with factor 0.5 — five configurations."""
    schedules = [
        Schedule("constant", 0.1),
        Schedule("constant", 0.01),
        Schedule("constant", 0.001),
        Schedule("geometric", 0.1, 0.5),
        Schedule("geometric", 0.01, 0.5),
    ]
    return [
        TrainConfig(schedule=s, minibatch_size=minibatch_size, max_epochs=max_epochs,
                    patience=patience, seed=seed, target_kind=target_kind)
        for s in schedules
    ]


@dataclass
class EpochRecord:
    epoch: int
    train_ce: float
    dev_ce: float
    dev_fer: float
    rate: float
    wall_time: float

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class DevSet:
    """Dev-split bundle: features shaped like the training data, hard labels
    for the error rate, and optional targets for the selection cross-entropy
    (hard labels are used when targets is None)."""

    features: object
    hard_labels: object
    targets: object = None


@dataclass
class TrainResult:
    best_params: layers.ModelParams
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_dev_ce: float = float("inf")


def make_context_windows(features, left, right):
    """Per-frame neighbor concatenation with edge replication (data-layer step
    for feed-forward models)."""
    return layers.context_windows(features, left, right)


# ---------------------------------------------------------------------------


def _shuffle_rng(config, epoch):
    return substream(config.seed, "shuffle", epoch)


def _dev_eval_feedforward(spec, params, dev):
    logits = layers.forward_logits(spec, params, dev.features)
    logq = log_softmax(logits, axis=1)
    targets = dev.targets
    if targets is None:
        targets = SparseTargets.from_hard(dev.hard_labels, spec.num_states)
    ce = batch_cross_entropy_sum(targets, logq) / len(targets)
    fer = float(np.mean(np.argmax(logits, axis=1) != np.asarray(dev.hard_labels)))
    return ce, fer


def _dev_eval_recurrent(spec, params, dev):
    total_ce = 0.0
    frames = 0
    errors = 0
    targets = dev.targets
    for k, feats in enumerate(dev.features):
        logits = layers.forward_logits(spec, params, feats)
        logq = log_softmax(logits, axis=1)
        labels = np.asarray(dev.hard_labels[k])
        t = (SparseTargets.from_hard(labels, spec.num_states)
             if targets is None else targets[k])
        total_ce += batch_cross_entropy_sum(t, logq)
        errors += int(np.sum(np.argmax(logits, axis=1) != labels))
        frames += logits.shape[0]
    return total_ce / frames, errors / frames


def train(spec, init_params, train_data, dev_data, targets, config,
          metrics_stream=None, on_improve=None, on_batch=None):
    """SGD over the training data; returns (best_params, history) as a
    TrainResult.

    Feed-forward: train_data is a [frames, dim] matrix and targets a
    SparseTargets over the same frames. Recurrent: train_data is a list of
    per-utterance feature matrices and targets a parallel list of per-utterance
    SparseTargets. dev_data is a DevSet shaped accordingly. `on_batch`
    (epoch, batch_index, mean_ce) fires once per minibatch.
    """
    feedforward = spec.kind == layers.FEED_FORWARD
    if feedforward:
        train_data = as_f64(train_data)
        if len(targets) != train_data.shape[0]:
            raise DataError(
                f"{train_data.shape[0]} training frames vs {len(targets)} target frames")
    else:
        if len(targets) != len(train_data):
            raise DataError(
                f"{len(train_data)} training utterances vs {len(targets)} target groups")
        for feats, t in zip(train_data, targets):
            if feats.shape[0] != len(t):
                raise DataError(
                    f"utterance has {feats.shape[0]} frames but {len(t)} target frames")

    params = init_params
    result = TrainResult(best_params=init_params)
    stale = 0
    for epoch in range(config.max_epochs):
        started = time.perf_counter()
        rate = config.schedule.rate_at(epoch)
        rng = _shuffle_rng(config, epoch)
        try:
            if feedforward:
                params, train_ce = _epoch_feedforward(
                    spec, params, train_data, targets, config, rng, rate, epoch, on_batch)
                dev_ce, dev_fer = _dev_eval_feedforward(spec, params, dev_data)
            else:
                params, train_ce = _epoch_recurrent(
                    spec, params, train_data, targets, config, rng, rate, epoch, on_batch)
                dev_ce, dev_fer = _dev_eval_recurrent(spec, params, dev_data)
        except NumericError as e:
            # overflowed activations/params: same failure class as a NaN loss
            raise TrainingDivergedError(
                f"non-finite values at epoch {epoch}: {e}", epoch=epoch) from e

        record = EpochRecord(epoch=epoch, train_ce=train_ce, dev_ce=dev_ce,
                             dev_fer=dev_fer, rate=rate,
                             wall_time=time.perf_counter() - started)
        result.history.append(record)
        if metrics_stream is not None:
            metrics_stream.write(record.to_json() + "\n")

        if dev_ce < result.best_dev_ce:
            result.best_dev_ce = dev_ce
            result.best_epoch = epoch
            result.best_params = params
            stale = 0
            if on_improve is not None:
                on_improve(params, record)
        else:
            stale += 1
            if stale >= config.patience:
                break
    return result


def _epoch_feedforward(spec, params, X, targets, config, rng, rate, epoch, on_batch):
    n = X.shape[0]
    perm = rng.permutation(n)
    ce_sum = 0.0
    for start in range(0, n, config.minibatch_size):
        b = start // config.minibatch_size
        idx = perm[start : start + config.minibatch_size]
        batch_targets = targets.take(idx)
        logits, caches = layers.forward_with_cache(spec, params, X[idx])
        logq = log_softmax(logits, axis=1)
        batch_ce = batch_cross_entropy_sum(batch_targets, logq)
        if not np.isfinite(batch_ce):
            raise TrainingDivergedError(
                f"non-finite loss at epoch {epoch}, batch {b}", epoch=epoch, batch=b)
        ce_sum += batch_ce
        if on_batch is not None:
            on_batch(epoch, b, batch_ce / len(idx))
        grad_logits = batch_logit_gradient(batch_targets, np.exp(logq), 1.0 / len(idx))
        grads = layers.backward_from_cache(spec, params, caches, grad_logits)
        params = layers.add_scaled(params, grads, -rate)
    return params, ce_sum / n


def _utterance_batches(order, frame_counts, minibatch_size):
    """Group shuffled utterances until each batch holds >= minibatch_size frames."""
    batch = []
    frames = 0
    for u in order:
        batch.append(u)
        frames += frame_counts[u]
        if frames >= minibatch_size:
            yield batch
            batch = []
            frames = 0
    if batch:
        yield batch


def _epoch_recurrent(spec, params, utterances, targets, config, rng, rate, epoch, on_batch):
    order = rng.permutation(len(utterances))
    frame_counts = [feats.shape[0] for feats in utterances]
    ce_sum = 0.0
    total_frames = sum(frame_counts)
    for b, batch in enumerate(_utterance_batches(order, frame_counts, config.minibatch_size)):
        batch_frames = sum(frame_counts[u] for u in batch)
        batch_ce = 0.0
        grads = None
        for u in batch:
            logits, caches = layers.forward_with_cache(spec, params, utterances[u])
            logq = log_softmax(logits, axis=1)
            utt_ce = batch_cross_entropy_sum(targets[u], logq)
            if not np.isfinite(utt_ce):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {b}", epoch=epoch, batch=b)
            batch_ce += utt_ce
            grad_logits = batch_logit_gradient(targets[u], np.exp(logq), 1.0 / batch_frames)
            g = layers.backward_from_cache(spec, params, caches, grad_logits)
            grads = g if grads is None else layers.add_scaled(grads, g, 1.0)
        ce_sum += batch_ce
        if on_batch is not None:
            on_batch(epoch, b, batch_ce / batch_frames)
        params = layers.add_scaled(params, grads, -rate)
    return params, ce_sum / total_frames


# ---------------------------------------------------------------------------
# hyperparameter sweep


@dataclass
class SweepRun:
    config: TrainConfig
    result: TrainResult = None
    error: str = None

    @property
    def failed(self):
        return self.error is not None

    @property
    def best_dev_ce(self):
        return self.result.best_dev_ce if self.result else float("inf")


@dataclass
class SweepReport:
    runs: list
    best_index: int

    @property
    def best_run(self):
        return self.runs[self.best_index]

    @property
    def best_params(self):
        return self.best_run.result.best_params


def sweep(spec, init, train_data, dev_data, targets, grid,
          metrics_stream=None, on_global_improve=None):
    """Train one model per config from shared initial parameters and select
    the run with the lowest dev cross-entropy; failed runs are recorded and
    skipped. `init` is a ModelParams or an integer seed for init_params."""
    grid = list(grid)
    if not grid:
        raise ConfigError("sweep grid is empty")
    if not isinstance(init, layers.ModelParams):
        init = layers.init_params(spec, init)

    runs = []
    best_ce = float("inf")

    def improve_hook(params, record):
        nonlocal best_ce
        if record.dev_ce < best_ce:
            best_ce = record.dev_ce
            if on_global_improve is not None:
                on_global_improve(params, record)

    for config in grid:
        try:
            result = train(spec, init, train_data, dev_data, targets, config,
                           metrics_stream=metrics_stream, on_improve=improve_hook)
            runs.append(SweepRun(config=config, result=result))
        except TrainingDivergedError as e:
            runs.append(SweepRun(config=config, error=str(e)))
    best_index = min(range(len(runs)), key=lambda k: runs[k].best_dev_ce)
    if runs[best_index].failed:
        raise TrainingDivergedError("every sweep run diverged")
    return SweepReport(runs=runs, best_index=best_index)
