"""Loss mathematics for matching a student to a target distribution.

Cross-entropy H(P,Q) = -sum_i P(i) ln Q(i) over the sparse target support,
KL(P||Q) = H(P,Q) - H(P) with H(P) = -sum P ln P (0 ln 0 = 0), and the logit
gradient d/da_i of the cross-entropy through the softmax: Q(i) - P(i).
Minimizing cross-entropy against soft targets is the same as minimizing the
divergence, since the target entropy does not depend on the student.

Everything is computed in log space from max-stabilized log-softmax; sparse
targets are packed into CSR-style arrays so minibatch losses and gradients
are single fancy-indexing passes.
"""

from dataclasses import dataclass

import numpy as np

from . import layers
from .alignments import SoftAlignment, truncate_to_mass
from .errors import DataError, NumericError, ShapeError
from .numeric import as_f64, log_softmax
from .parallel import thread_map


@dataclass
class LossReport:
    """Mean per-frame losses in nats."""

    cross_entropy: float
    kl_divergence: float
    frame_count: int


class SparseTargets:
    """Frame-aligned sparse target distributions in packed (CSR) form."""

    def __init__(self, indptr, ids, probs, num_states):
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.ids = np.asarray(ids, dtype=np.int64)
        self.probs = as_f64(probs)
        self.num_states = int(num_states)
        if len(self.ids) and self.ids.max() >= self.num_states:
            raise DataError(
                f"target references state id {int(self.ids.max())} >= states {self.num_states}")
        if len(self.ids) and self.ids.min() < 0:
            raise DataError("negative state id in targets")

    def __len__(self):
        return len(self.indptr) - 1

    @property
    def entry_count(self):
        return len(self.ids)

    @classmethod
    def from_hard(cls, labels, num_states):
        labels = np.asarray(labels, dtype=np.int64)
        n = len(labels)
        return cls(np.arange(n + 1), labels, np.ones(n), num_states)

    @classmethod
    def from_soft_frames(cls, frames, num_states):
        """Pack an ordered iterable of SparsePosterior frames."""
        frames = list(frames)
        counts = np.array([len(f) for f in frames], dtype=np.int64)
        indptr = np.zeros(len(frames) + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        if len(frames):
            ids = np.concatenate([f.ids for f in frames])
            probs = np.concatenate([f.probs for f in frames])
        else:
            ids = np.zeros(0, dtype=np.int64)
            probs = np.zeros(0)
        return cls(indptr, ids, probs, num_states)

    def take(self, frame_idx):
        """Sub-targets for the given frame indices (minibatch gather)."""
        frame_idx = np.asarray(frame_idx, dtype=np.int64)
        counts = self.indptr[frame_idx + 1] - self.indptr[frame_idx]
        indptr = np.zeros(len(frame_idx) + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        total = int(indptr[-1])
        starts = np.repeat(self.indptr[frame_idx], counts)
        offsets = np.arange(total, dtype=np.int64) - np.repeat(indptr[:-1], counts)
        pos = starts + offsets
        return SparseTargets(indptr, self.ids[pos], self.probs[pos], self.num_states)

    def row_indices(self):
        """Frame index of every packed entry."""
        counts = np.diff(self.indptr)
        return np.repeat(np.arange(len(self), dtype=np.int64), counts)

    def entropy_sum(self):
        """Sum over frames of -sum p ln p (all packed probs are > 0)."""
        return float(-np.sum(self.probs * np.log(self.probs)))


def _check_frame(target, vec, name):
    vec = as_f64(vec)
    if vec.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {vec.shape}")
    if len(target.ids) and int(np.max(target.ids)) >= vec.size:
        raise DataError(
            f"target references state id {int(np.max(target.ids))} >= states {vec.size}")
    return vec


def cross_entropy(target, student_log_probs):
    """H(P, Q) in nats for one frame; P is the sparse target, Q the student."""
    logq = _check_frame(target, student_log_probs, "student_log_probs")
    return float(-np.sum(target.probs * logq[target.ids]))


def kl_divergence(target, student_log_probs):
    """KL(P || Q) in nats; equals cross_entropy minus the target entropy."""
    logq = _check_frame(target, student_log_probs, "student_log_probs")
    p = target.probs
    return float(np.sum(p * (np.log(p) - logq[target.ids])))


def logit_gradient(target, student_probs):
    """Gradient of the frame cross-entropy at the pre-softmax activations:
    Q - P, with P zero off the sparse support. Components sum to 0."""
    q = _check_frame(target, student_probs, "student_probs")
    grad = q.copy()
    grad[target.ids] -= target.probs
    return grad


# ---------------------------------------------------------------------------
# batched variants used by the trainer (one gather per minibatch)


def batch_cross_entropy_sum(targets, log_probs):
    """Sum over frames of H(P_t, Q_t); log_probs is [frames, states]."""
    rows = targets.row_indices()
    return float(-np.sum(targets.probs * log_probs[rows, targets.ids]))


def batch_logit_gradient(targets, probs, scale=1.0):
    """scale * (Q - P) for a batch; (frame, id) pairs are unique so a single
    fancy-indexed subtraction is exact."""
    grad = probs * scale
    rows = targets.row_indices()
    grad[rows, targets.ids] -= targets.probs * scale
    return grad


def loss_report(targets, logits):
    """Mean cross-entropy and KL divergence of logits against sparse targets."""
    logits = as_f64(logits)
    if logits.shape[0] != len(targets):
        raise ShapeError(f"{logits.shape[0]} logit rows vs {len(targets)} target frames")
    logq = log_softmax(logits, axis=1)
    ce_sum = batch_cross_entropy_sum(targets, logq)
    kl_sum = ce_sum - targets.entropy_sum()
    n = len(targets)
    if not np.isfinite(ce_sum):
        raise NumericError("non-finite loss")
    return LossReport(cross_entropy=ce_sum / n, kl_divergence=kl_sum / n, frame_count=n)


# ---------------------------------------------------------------------------
# soft-alignment generation from a trained model


def generate_soft_alignments(model_spec, model_params, utterances, mass=0.98):
    """Run the model over each utterance and truncate its per-frame posterior.

    `utterances` is an ordered iterable of (utterance_id, features[T, d])
    pairs; output order matches input order regardless of worker count.
    """
    utterances = list(utterances)

    def one(item):
        utt_id, feats = item
        logits = layers.frame_logits(model_spec, model_params, feats)
        probs = np.exp(log_softmax(logits, axis=1))
        frames = [truncate_to_mass(row, mass) for row in probs]
        return SoftAlignment(utt_id=utt_id, frames=frames, retained_mass_threshold=mass)

    return thread_map(one, utterances)
