"""Edit-distance-based evaluation of decoded label sequences."""

from dataclasses import dataclass


@dataclass
class MetricsReport:
    """Evaluation summary; fields not requested stay None.

    ``ler`` is per-sequence (edit distance over reference length),
    ``ser`` the fraction of sequences not decoded exactly. ``decode``
    records the decoding settings the rates were computed with.
    """

    loss: float | None = None
    ler: list | None = None
    ler_mean: float | None = None
    ser: float | None = None
    decode: dict | None = None


def edit_distance(a, b):
    """Levenshtein distance with unit insert/delete/substitute costs."""
    a = list(a)
    b = list(b)
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        curr = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            curr[j] = min(
                prev[j] + 1,
                curr[j - 1] + 1,
                prev[j - 1] + (x != y),
            )
        prev = curr
    return prev[-1]


def label_error_rate(pred, truth):
    """Edit distance normalized by the reference length.

    An empty reference gives 0 for an empty prediction and len(pred)
    otherwise (each spurious label counts in full).
    """
    pred = list(pred)
    truth = list(truth)
    if not truth:
        return float(len(pred))
    return edit_distance(pred, truth) / len(truth)


def sequence_error_rate(preds, truths):
    """Fraction of sequences whose prediction is not exactly right."""
    if len(preds) != len(truths):
        raise ValueError(
            "got %d predictions for %d references" % (len(preds), len(truths))
        )
    if not truths:
        raise ValueError("sequence_error_rate needs at least one sequence")
    wrong = sum(1 for p, t in zip(preds, truths) if list(p) != list(t))
    return wrong / len(truths)
