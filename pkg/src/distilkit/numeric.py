"""Dense tensor primitives with checked semantics.

Values are plain numpy float64 arrays in row-major order. Operations here are
pure, allocate fresh outputs, and either return all-finite results or raise;
everything above (layers, losses) is composed from these.
"""

import numpy as np

from .errors import NumericError, ShapeError


def as_f64(x):
    """Coerce to a float64 ndarray without copying when already one."""
    return np.asarray(x, dtype=np.float64)


def ensure_finite(x, what="value"):
    x = as_f64(x)
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite {what}")
    return x


def matmul(a, b):
    """Matrix product of a 2-D `a` (m×k) and 2-D `b` (k×n)."""
    a = as_f64(a)
    b = as_f64(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    return a @ b


def sigmoid(x):
    """Elementwise logistic 1/(1+exp(-x)); saturates to exactly 0/1, never NaN."""
    x = as_f64(x)
    # exp of a non-positive argument cannot overflow
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def tanh(x):
    return np.tanh(as_f64(x))


def relu(x):
    return np.maximum(as_f64(x), 0.0)


def softmax(logits, axis=-1):
    """Max-stabilized softmax along `axis`; invariant to constant shifts."""
    logits = as_f64(logits)
    ensure_finite(logits, "softmax input")
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    """log(softmax(logits)) computed without materializing tiny exponentials."""
    logits = as_f64(logits)
    ensure_finite(logits, "softmax input")
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def elementwise_mul(a, b):
    """Hadamard product of equal-shaped tensors."""
    a = as_f64(a)
    b = as_f64(b)
    if a.shape != b.shape:
        raise ShapeError(f"elementwise shapes disagree: {a.shape} vs {b.shape}")
    return a * b
