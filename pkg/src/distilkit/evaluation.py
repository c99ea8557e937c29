"""Dataset metrics and the alignment-ablation experiment harness.

Frame error rate (argmax mismatches) stands in for word error rate — there is
no decoder here — and dataset cross-entropy in nats mirrors the dev-set CSE
diagnostic. The ablation trains one student per alignment condition with an
identical sweep and initialization, then scores every student against the
ground-truth labels so conditions are directly comparable.
"""

from dataclasses import dataclass, field

import numpy as np

from . import layers, training
from .alignments import HardAlignment, SoftAlignment
from .distillation import LossReport, SparseTargets, batch_cross_entropy_sum
from .errors import DataError, TrainingDivergedError
from .numeric import log_softmax
from .parallel import thread_map


def frame_error_rate(predictions, reference):
    """Fraction of frames whose predicted state differs from the reference.

    Both arguments are sequences of HardAlignment covering the same utterance
    ids with the same frame counts.
    """
    ref_by_id = {a.utt_id: a for a in reference}
    pred_by_id = {a.utt_id: a for a in predictions}
    if set(ref_by_id) != set(pred_by_id):
        missing = set(ref_by_id) ^ set(pred_by_id)
        raise DataError(f"utterance ids disagree (e.g. {sorted(missing)[:3]})")
    errors = 0
    frames = 0
    for utt_id, ref in ref_by_id.items():
        pred = pred_by_id[utt_id]
        if len(pred.labels) != len(ref.labels):
            raise DataError(
                f"utterance {utt_id!r}: {len(pred.labels)} predicted vs {len(ref.labels)} reference frames")
        errors += int(np.sum(pred.labels != ref.labels))
        frames += len(ref.labels)
    if frames == 0:
        raise DataError("no frames to score")
    return errors / frames


def model_predictions(spec, params, utterances):
    """Argmax frame labels for each utterance (windowed for feed-forward specs)."""

    def one(utt):
        logits = layers.frame_logits(spec, params, utt.features)
        return HardAlignment(utt_id=utt.utt_id, labels=np.argmax(logits, axis=1))

    return thread_map(one, utterances)


def pack_alignment_targets(alignment_set, utterances, num_states):
    """Per-utterance SparseTargets in utterance order, hard or soft input."""
    by_id = {a.utt_id: a for a in alignment_set}
    packed = []
    for utt in utterances:
        if utt.utt_id not in by_id:
            raise DataError(f"no alignment for utterance {utt.utt_id!r}")
        a = by_id[utt.utt_id]
        if isinstance(a, SoftAlignment):
            if a.frame_count() != utt.features.shape[0]:
                raise DataError(
                    f"utterance {utt.utt_id!r}: {utt.features.shape[0]} frames vs "
                    f"{a.frame_count()} target frames")
            packed.append(SparseTargets.from_soft_frames(a.frames, num_states))
        else:
            if len(a.labels) != utt.features.shape[0]:
                raise DataError(
                    f"utterance {utt.utt_id!r}: {utt.features.shape[0]} frames vs "
                    f"{len(a.labels)} target frames")
            packed.append(SparseTargets.from_hard(a.labels, num_states))
    return packed


def dataset_loss(spec, params, utterances, targets):
    """Mean per-frame cross-entropy and KL against hard or soft targets."""
    per_utt = pack_alignment_targets(targets, utterances, spec.num_states)
    logits_list = thread_map(
        lambda utt: layers.frame_logits(spec, params, utt.features), utterances)
    ce_sum = 0.0
    entropy_sum = 0.0
    frames = 0
    for logits, t in zip(logits_list, per_utt):
        logq = log_softmax(logits, axis=1)
        ce_sum += batch_cross_entropy_sum(t, logq)
        entropy_sum += t.entropy_sum()
        frames += logits.shape[0]
    return LossReport(cross_entropy=ce_sum / frames,
                      kl_divergence=(ce_sum - entropy_sum) / frames,
                      frame_count=frames)


def dataset_cse(spec, params, utterances, targets):
    """Mean per-frame cross-entropy in nats (the dev-set comparison metric)."""
    return dataset_loss(spec, params, utterances, targets).cross_entropy


# ---------------------------------------------------------------------------
# alignment ablation


@dataclass
class AlignmentCondition:
    """One training condition: a name, training targets, and optional dev
    targets for the early-stopping metric (dev hard labels when None)."""

    name: str
    train: list
    dev: list = None


@dataclass
class AblationRow:
    condition: str
    status: str = "ok"
    schedule: str = ""
    best_epoch: int = -1
    dev_ce: float = float("nan")
    dev_fer: float = float("nan")
    test_ce: float = float("nan")
    test_fer: float = float("nan")

    def to_dict(self):
        return {
            "condition": self.condition,
            "status": self.status,
            "schedule": self.schedule,
            "best_epoch": self.best_epoch,
            "dev_ce": self.dev_ce,
            "dev_fer": self.dev_fer,
            "test_ce": self.test_ce,
            "test_fer": self.test_fer,
        }


@dataclass
class AblationReport:
    rows: list = field(default_factory=list)
    teacher_dev_fer: float = None
    teacher_dev_ce: float = None

    def row(self, condition):
        for r in self.rows:
            if r.condition == condition:
                return r
        raise KeyError(condition)

    def format_text(self):
        header = f"{'condition':<18} {'status':<7} {'schedule':<20} {'dev CE':>9} {'dev FER':>8} {'test CE':>9} {'test FER':>9}"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            lines.append(
                f"{r.condition:<18} {r.status:<7} {r.schedule:<20} "
                f"{r.dev_ce:>9.5f} {r.dev_fer:>8.4f} {r.test_ce:>9.5f} {r.test_fer:>9.4f}")
        if self.teacher_dev_fer is not None:
            lines.append("")
            lines.append(f"teacher dev FER {self.teacher_dev_fer:.4f}"
                         f"  dev CE {self.teacher_dev_ce:.5f}")
        lines.append("FER substitutes for WER (no decoder); CE in nats vs ground-truth labels.")
        return "\n".join(lines)


def _window_split(spec, utterances):
    left, right = spec.context
    X = np.vstack([layers.context_windows(u.features, left, right) for u in utterances])
    labels = np.concatenate([u.labels for u in utterances])
    return X, labels


def _concat_targets(per_utt):
    total = sum(len(t) for t in per_utt)
    indptr = np.zeros(total + 1, dtype=np.int64)
    ids = []
    probs = []
    pos = 0
    for t in per_utt:
        counts = np.diff(t.indptr)
        indptr[pos + 1 : pos + len(t) + 1] = indptr[pos] + np.cumsum(counts)
        ids.append(t.ids)
        probs.append(t.probs)
        pos += len(t)
    return SparseTargets(indptr, np.concatenate(ids), np.concatenate(probs),
                         per_utt[0].num_states)


def ablation_report(student_spec, data, conditions, init_seed=0, shuffle_seed=0,
                    minibatch_size=128, max_epochs=20, patience=1):
    """Train one student per alignment condition and score all of them against
    the ground-truth labels of the dev and test splits."""
    train_utts = data.splits["train"]
    dev_utts = data.splits["dev"]
    test_utts = data.splits["test"]

    X_train, _ = _window_split(student_spec, train_utts)
    X_dev, y_dev = _window_split(student_spec, dev_utts)

    dev_truth = [HardAlignment(utt_id=u.utt_id, labels=u.labels) for u in dev_utts]
    test_truth = [HardAlignment(utt_id=u.utt_id, labels=u.labels) for u in test_utts]

    init = layers.init_params(student_spec, init_seed)
    report = AblationReport()
    for cond in conditions:
        row = AblationRow(condition=cond.name)
        report.rows.append(row)
        try:
            targets = _concat_targets(
                pack_alignment_targets(cond.train, train_utts, student_spec.num_states))
            dev_targets = None
            if cond.dev is not None:
                dev_targets = _concat_targets(
                    pack_alignment_targets(cond.dev, dev_utts, student_spec.num_states))
            dev_set = training.DevSet(features=X_dev, hard_labels=y_dev, targets=dev_targets)
            grid = training.default_sweep_grid(
                seed=shuffle_seed, minibatch_size=minibatch_size,
                max_epochs=max_epochs, patience=patience)
            sweep_report = training.sweep(student_spec, init, X_train, dev_set, targets, grid)
            best = sweep_report.best_run
            params = best.result.best_params
            row.schedule = best.config.schedule.describe()
            row.best_epoch = best.result.best_epoch
            row.dev_ce = dataset_cse(student_spec, params, dev_utts, dev_truth)
            row.dev_fer = frame_error_rate(
                model_predictions(student_spec, params, dev_utts), dev_truth)
            row.test_ce = dataset_cse(student_spec, params, test_utts, test_truth)
            row.test_fer = frame_error_rate(
                model_predictions(student_spec, params, test_utts), test_truth)
        except TrainingDivergedError as e:
            row.status = "failed"
            row.schedule = str(e)
    return report
