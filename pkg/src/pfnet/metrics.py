"""Frame/sentence error rates, equal error rate and filter response export."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, PreconditionError


def frame_error_rate(posteriors, labels):
    """Percentage of frames whose argmax (lowest index on ties) misses the label."""
    posteriors = np.asarray(posteriors)
    labels = np.asarray(labels)
    if posteriors.ndim != 2 or posteriors.shape[0] < 1 or labels.shape != (posteriors.shape[0],):
        raise DataError("frame_error_rate needs (N, C) posteriors and N labels, N >= 1")
    return 100.0 * float(np.mean(posteriors.argmax(axis=1) != labels))


def sentence_vote(posteriors, rule="mean"):
    """Utterance decision from its frame posteriors.

    ``mean`` takes the argmax of the average posterior; ``majority`` counts
    per-frame argmax votes.  Ties go to the lowest class index.
    """
    posteriors = np.asarray(posteriors, dtype=np.float64)
    if posteriors.ndim != 2 or posteriors.shape[0] < 1:
        raise DataError("sentence_vote needs at least one frame")
    if rule == "mean":
        return int(posteriors.mean(axis=0).argmax())
    if rule == "majority":
        return int(np.bincount(posteriors.argmax(axis=1), minlength=posteriors.shape[1]).argmax())
    raise PreconditionError(f"unknown voting rule {rule!r}")


def utterance_posteriors(posteriors, utt_index, num_utts):
    """Mean frame posterior per utterance, shape ``(num_utts, C)``."""
    posteriors = np.asarray(posteriors, dtype=np.float64)
    sums = np.zeros((num_utts, posteriors.shape[1]))
    np.add.at(sums, utt_index, posteriors)
    counts = np.bincount(utt_index, minlength=num_utts)
    if np.any(counts == 0):
        raise DataError("every utterance needs at least one frame")
    return sums / counts[:, None]


def utterance_predictions(posteriors, utt_index, num_utts, rule="mean"):
    posteriors = np.asarray(posteriors)
    if rule == "mean":
        return utterance_posteriors(posteriors, utt_index, num_utts).argmax(axis=1)
    return np.array([sentence_vote(posteriors[utt_index == i], rule) for i in range(num_utts)])


def classification_error_rate(predicted, truth):
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.size < 1 or predicted.shape != truth.shape:
        raise DataError("classification_error_rate needs matching non-empty predictions and labels")
    return 100.0 * float(np.mean(predicted != truth))


def eer(scores, is_target):
    """Equal error rate in percent.

    Thresholds sweep the sorted unique scores plus ``+inf``.  At threshold
    ``t`` a non-target is falsely accepted when its score is ``>= t`` and a
    target is falsely rejected when its score is ``< t``.  Where the two
    rates cross between adjacent thresholds the crossing point of the
    straight line joining them is returned.
    """
    scores = np.asarray(scores, dtype=np.float64)
    is_target = np.asarray(is_target, dtype=bool)
    if scores.shape != is_target.shape or scores.ndim != 1:
        raise DataError("scores and is_target must be matching 1-d arrays")
    n_tar = int(is_target.sum())
    n_non = is_target.size - n_tar
    if n_tar == 0 or n_non == 0:
        raise DataError("eer needs at least one target and one non-target trial")
    thresholds = np.append(np.unique(scores), np.inf)
    tar = np.sort(scores[is_target])
    non = np.sort(scores[~is_target])
    frr = np.searchsorted(tar, thresholds, side="left") / n_tar
    far = 1.0 - np.searchsorted(non, thresholds, side="left") / n_non
    d = frr - far  # non-decreasing, starts < 0, ends > 0
    hit = np.nonzero(d == 0)[0]
    if hit.size:
        i = hit[0]
        return 100.0 * float((far[i] + frr[i]) / 2.0)
    i = int(np.nonzero(d > 0)[0][0]) - 1
    t = -d[i] / (d[i + 1] - d[i])
    return 100.0 * float(far[i] + t * (far[i + 1] - far[i]))


def trial_scores(utt_post, utt_ids, trials):
    """Posterior of the claimed class, averaged over the test utterance's frames."""
    pos = {u: i for i, u in enumerate(utt_ids)}
    missing = [t.utt_id for t in trials if t.utt_id not in pos]
    if missing:
        raise DataError(f"trial list references unknown utterances, e.g. {missing[0]!r}")
    scores = np.array([utt_post[pos[t.utt_id], t.enroll_class] for t in trials])
    return scores, np.array([t.is_target for t in trials])


@dataclass
class MetricsReport:
    epoch: int
    loss: float
    fer_percent: float
    cer_percent: float
    eer_percent: float | None = None
    wall_time_s: float | None = None

    def __post_init__(self):
        for name in ("fer_percent", "cer_percent", "eer_percent"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 100.0:
                raise DataError(f"{name}={v} outside [0, 100]")

    def to_json(self, include_time=False):
        d = asdict(self)
        if not include_time:
            d.pop("wall_time_s")
        return json.dumps(d, sort_keys=True)


def export_filter_responses(kernels, grid_size, out_dir, prefix="filters"):
    """Write ``<prefix>_time.csv`` (taps) and ``<prefix>_freq.csv`` (magnitude).

    ``kernels`` is the ``(F, L)`` array the network convolves with.  The
    frequency CSV has ``F * grid_size`` rows on a uniform grid over [0, 0.5].
    """
    kernels = np.asarray(kernels, dtype=np.float64)
    F, L = kernels.shape
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = np.linspace(0.0, 0.5, grid_size)
    c = (L - 1) // 2
    n = np.arange(-c, c + 1)
    phase = 2.0 * math.pi * np.outer(n, grid)
    mag = np.hypot(kernels @ np.cos(phase), kernels @ np.sin(phase))
    time_path, freq_path = out / f"{prefix}_time.csv", out / f"{prefix}_freq.csv"
    with open(time_path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["filter_id", "tap_offset", "value"])
        for i in range(F):
            for j in range(L):
                wr.writerow([i, int(n[j]), f"{kernels[i, j]:.17g}"])
    with open(freq_path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["filter_id", "f_normalized", "magnitude"])
        for i in range(F):
            for g, m in zip(grid, mag[i]):
                wr.writerow([i, f"{g:.17g}", f"{m:.17g}"])
    return time_path, freq_path


def read_response_csv(path):
    """Load a frequency CSV back as ``(filter_id, f, magnitude)`` arrays."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0].astype(int), data[:, 1], data[:, 2]


__all__ = [
    "MetricsReport",
    "classification_error_rate",
    "eer",
    "export_filter_responses",
    "frame_error_rate",
    "read_response_csv",
    "sentence_vote",
    "trial_scores",
    "utterance_posteriors",
    "utterance_predictions",
]
