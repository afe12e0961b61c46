"""Log-space forward-backward machinery for the CTC objective.

Conventions used throughout this module (and the rest of the package):

- A posterior matrix is a (T, K) float array of per-frame class
  probabilities; the blank class is always the last column, index K-1.
- Label sequences hold indices in [0, K-1) and never contain the blank.
- All lattice arithmetic happens in natural-log space with float64.
  log(0) is -inf, which ``log_sum_exp`` and ``np.logaddexp`` propagate
  without producing NaNs.
- The lattice state axis is the blank-extended label sequence
  [blank, y_1, blank, ..., y_L, blank] of length 2L+1. ``alpha[t][s]``
  includes the emission at frame t; ``beta[t][s]`` covers frames t+1
  onward, so for every t, logsumexp_s(alpha[t][s] + beta[t][s]) equals
  the full-sequence log-likelihood.
"""

from dataclasses import dataclass

import numpy as np

NEG_INF = -np.inf


class InfeasibleAlignment(Exception):
    """The label sequence cannot be aligned to the available frames.

    A sequence of length L with R adjacent repeated labels needs at
    least L + R frames (repeats require an intervening blank). Raised
    instead of returning an infinite loss so callers can tell data
    errors apart from numeric underflow.
    """

    def __init__(self, message, sequence_index=None):
        if sequence_index is not None:
            message = "sequence %d: %s" % (sequence_index, message)
        super().__init__(message)
        self.sequence_index = sequence_index


@dataclass
class Lattice:
    """Forward/backward tables plus the sequence log-likelihood."""

    alpha: np.ndarray  # (input_len, 2L+1) log-probabilities
    beta: np.ndarray   # (input_len, 2L+1) log-probabilities
    log_likelihood: float


def log_sum_exp(values):
    """log(sum_i exp(values[i])), computed with a max shift.

    An empty input and an all-(-inf) input both return -inf. NaN
    entries raise ValueError.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return NEG_INF
    if np.isnan(v).any():
        raise ValueError("log_sum_exp: NaN in input")
    m = v.max()
    if m == NEG_INF:
        return NEG_INF
    return float(m + np.log(np.exp(v - m).sum()))


def collapse(path, blank_index):
    """Map a frame-level path to a label sequence.

    Merges adjacent equal symbols first, then deletes blanks.
    """
    out = []
    prev = None
    for sym in path:
        sym = int(sym)
        if sym < 0 or sym > blank_index:
            raise ValueError("path symbol %d outside [0, %d]" % (sym, blank_index))
        if sym != prev and sym != blank_index:
            out.append(sym)
        prev = sym
    return out


def extend_with_blanks(labels, blank_index):
    """Interleave blanks around ``labels``: [b, y_1, b, ..., y_L, b]."""
    labels = np.asarray(labels, dtype=np.int64)
    ext = np.full(2 * labels.size + 1, blank_index, dtype=np.int64)
    ext[1::2] = labels
    return ext


def _validate_labels(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise ValueError("labels must be one-dimensional")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes - 1):
        raise ValueError(
            "label indices must lie in [0, %d); got %r"
            % (num_classes - 1, labels.tolist())
        )
    return labels


def _check_feasible(ext, input_len):
    labels = ext[1::2]
    repeats = int(np.sum(labels[1:] == labels[:-1])) if labels.size > 1 else 0
    required = labels.size + repeats
    if input_len < required:
        raise InfeasibleAlignment(
            "need at least %d frames for %d labels with %d adjacent repeats, "
            "got input_len=%d" % (required, labels.size, repeats, input_len)
        )


def _log_emissions(probs, ext, input_len):
    with np.errstate(divide="ignore"):
        return np.log(probs[:input_len, ext])


def _skip_mask(ext, blank_index):
    # transition s-2 -> s is allowed iff ext[s] is a label differing from ext[s-2]
    allowed = np.zeros(ext.size, dtype=bool)
    if ext.size > 2:
        allowed[2:] = (ext[2:] != blank_index) & (ext[2:] != ext[:-2])
    return allowed


def ctc_forward(probs, ext, input_len):
    """Forward pass over the blank-extended lattice.

    Returns (alpha, log_likelihood) where alpha has shape
    (input_len, len(ext)). Raises InfeasibleAlignment when input_len
    is too short for the label sequence encoded in ``ext``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    ext = np.asarray(ext, dtype=np.int64)
    if not 1 <= input_len <= probs.shape[0]:
        raise ValueError("input_len %d outside [1, %d]" % (input_len, probs.shape[0]))
    _check_feasible(ext, input_len)
    blank = probs.shape[1] - 1
    S = ext.size
    emit = _log_emissions(probs, ext, input_len)
    skip = _skip_mask(ext, blank)

    alpha = np.full((input_len, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, input_len):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        if S > 2:
            acc[2:] = np.where(
                skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:]
            )
        alpha[t] = acc + emit[t]

    if S == 1:
        ll = float(alpha[-1, 0])
    else:
        ll = log_sum_exp(alpha[-1, -2:])
    return alpha, ll


def ctc_backward(probs, ext, input_len):
    """Backward pass; beta[t][s] covers emissions at frames t+1..input_len-1."""
    probs = np.asarray(probs, dtype=np.float64)
    ext = np.asarray(ext, dtype=np.int64)
    if not 1 <= input_len <= probs.shape[0]:
        raise ValueError("input_len %d outside [1, %d]" % (input_len, probs.shape[0]))
    _check_feasible(ext, input_len)
    blank = probs.shape[1] - 1
    S = ext.size
    emit = _log_emissions(probs, ext, input_len)
    skip = _skip_mask(ext, blank)

    beta = np.full((input_len, S), NEG_INF)
    beta[-1, max(S - 2, 0):] = 0.0
    for t in range(input_len - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        if S > 2:
            acc[:-2] = np.where(
                skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2]
            )
        beta[t] = acc
    return beta


def make_lattice(probs, labels, input_len=None, label_len=None):
    """Run both passes and return the filled :class:`Lattice`."""
    probs = np.asarray(probs, dtype=np.float64)
    T, K = probs.shape
    if input_len is None:
        input_len = T
    labels = np.asarray(labels, dtype=np.int64)
    if label_len is None:
        label_len = labels.size
    labels = _validate_labels(labels[:label_len], K)
    ext = extend_with_blanks(labels, K - 1)
    alpha, ll = ctc_forward(probs, ext, input_len)
    beta = ctc_backward(probs, ext, input_len)
    return Lattice(alpha=alpha, beta=beta, log_likelihood=ll)


def ctc_loss(probs, labels, input_len=None, label_len=None):
    """Negative log-likelihood -ln p(labels | probs).

    Only the first ``input_len`` frames and first ``label_len`` labels
    participate; anything beyond is padding and is ignored entirely.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] < 2:
        raise ValueError("posterior matrix must be (T, K) with K >= 2")
    T, K = probs.shape
    if input_len is None:
        input_len = T
    if not 1 <= input_len <= T:
        raise ValueError("input_len %d outside [1, %d]" % (input_len, T))
    active = probs[:input_len]
    if active.min() < 0.0:
        raise ValueError("posterior entries must be non-negative")
    row_sums = active.sum(axis=1)
    if np.abs(row_sums - 1.0).max() > 1e-6:
        bad = int(np.abs(row_sums - 1.0).argmax())
        raise ValueError(
            "posterior row %d sums to %.9f, not 1 within 1e-6" % (bad, row_sums[bad])
        )
    labels = np.asarray(labels, dtype=np.int64)
    if label_len is None:
        label_len = labels.size
    labels = _validate_labels(labels[:label_len], K)
    ext = extend_with_blanks(labels, K - 1)
    _, ll = ctc_forward(probs, ext, input_len)
    return -ll


def ctc_gradient(logits, labels, input_len=None, label_len=None):
    """Loss and its exact gradient w.r.t. pre-softmax activations.

    Applies a row softmax to ``logits[:input_len]``, runs the
    forward-backward pass, and returns (loss, grad) where
    grad[t][k] = softmax(logits)[t][k] - q[t][k], with q the lattice
    posterior of class k at frame t. Rows at t >= input_len are exactly
    zero.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ValueError("logits must be (T, K) with K >= 2")
    T, K = logits.shape
    if input_len is None:
        input_len = T
    if not 1 <= input_len <= T:
        raise ValueError("input_len %d outside [1, %d]" % (input_len, T))
    active = logits[:input_len]
    shifted = active - active.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    probs = expz / expz.sum(axis=1, keepdims=True)

    labels = np.asarray(labels, dtype=np.int64)
    if label_len is None:
        label_len = labels.size
    labels = _validate_labels(labels[:label_len], K)
    ext = extend_with_blanks(labels, K - 1)
    alpha, ll = ctc_forward(probs, ext, input_len)
    beta = ctc_backward(probs, ext, input_len)
    ab = alpha + beta

    posterior = np.zeros((input_len, K))
    for k in np.unique(ext):
        cols = ab[:, ext == k]
        posterior[:, k] = np.exp(np.logaddexp.reduce(cols, axis=1) - ll)

    grad = np.zeros((T, K))
    grad[:input_len] = probs - posterior
    return -ll, grad


def ctc_loss_batch(batch):
    """Per-sequence losses for a padded batch of posterior matrices.

    ``batch`` is any object with ``features`` (B, T_max, K),
    ``labels`` (B, L_max, padded with -1), ``input_lengths`` and
    ``label_lengths`` attributes. Element i is independent of the other
    batch members and of the padding width. Per-sequence errors are
    re-raised with the offending index attached.
    """
    losses = []
    for i in range(len(batch.input_lengths)):
        try:
            losses.append(
                ctc_loss(
                    batch.features[i],
                    batch.labels[i],
                    input_len=int(batch.input_lengths[i]),
                    label_len=int(batch.label_lengths[i]),
                )
            )
        except InfeasibleAlignment as err:
            raise InfeasibleAlignment(str(err), sequence_index=i) from err
        except ValueError as err:
            raise ValueError("sequence %d: %s" % (i, err)) from err
    return losses
