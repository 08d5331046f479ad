"""Entropy maps and patch-level (in)accuracy vs (un)certainty statistics.

Patches are ``patch_size`` square tiles (edge tiles keep their actual pixel
count). Only patches touching predicted or ground-truth foreground are
retained. A patch is *accurate* when its mean pixel agreement exceeds
``acc_threshold`` and *uncertain* when its mean entropy is at least the
uncertainty threshold.

Pixel agreement compares the sets of instances covering a pixel after
predicted instances are mapped onto ground-truth instances by an
IoU-maximizing assignment, so it does not depend on label order and handles
overlapping instances. Unmatched predictions never agree with anything.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .agglomeration import hungarian_max, pairwise_iou_matrix
from .core import UncertaintyMap
from .errors import ShapeMismatchError
from .losses import bernoulli_entropy


class PatchCounts(NamedTuple):
    n_ac: int
    n_au: int
    n_ic: int
    n_iu: int

    @property
    def total(self):
        return self.n_ac + self.n_au + self.n_ic + self.n_iu


class ConditionalProbs(NamedTuple):
    """``nan`` marks an undefined ratio (zero denominator)."""

    p_acc_given_cert: float
    p_unc_given_inacc: float
    pavpu: float


@dataclass(frozen=True)
class PatchStats:
    mean_agreement: np.ndarray  # per retained patch
    mean_entropy: np.ndarray


@dataclass(frozen=True)
class UncertaintyCurve:
    thresholds: np.ndarray
    p_acc_given_cert: np.ndarray
    p_unc_given_inacc: np.ndarray
    pavpu: np.ndarray
    counts: list

    def rows(self):
        return list(zip(self.thresholds, self.p_acc_given_cert, self.p_unc_given_inacc, self.pavpu))


def entropy_map(prob_map, reduce="max"):
    """Per-instance Bernoulli entropy maps and their pixel-wise combination.

    ``reduce`` is ``"max"`` (default) or ``"sum"``.
    """
    probs = prob_map.probs
    per_instance = [UncertaintyMap(bernoulli_entropy(p)) for p in probs]
    if not per_instance:
        combined = np.zeros(prob_map.shape)
    elif reduce == "max":
        combined = np.max([u.entropy for u in per_instance], axis=0)
    elif reduce == "sum":
        combined = np.sum([u.entropy for u in per_instance], axis=0)
    else:
        raise ValueError(f"unknown reduction {reduce!r}")
    return per_instance, UncertaintyMap(combined)


def patch_sums(values, patch_size):
    """Sum ``values`` over ``patch_size`` tiles; returns the (rows, cols) grid of sums."""
    h, w = values.shape
    r = np.arange(0, h, patch_size)
    c = np.arange(0, w, patch_size)
    return np.add.reduceat(np.add.reduceat(values, r, axis=0), c, axis=1)


def patch_means(values, patch_size):
    if patch_size < 1:
        raise ValueError("patch_size must be >= 1")
    values = np.asarray(values, dtype=np.float64)
    return patch_sums(values, patch_size) / patch_sums(np.ones_like(values), patch_size)


def pixel_agreement(pred, gt):
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"prediction grid {pred.shape} != ground truth grid {gt.shape}")
    match = hungarian_max(pairwise_iou_matrix(pred, gt))
    n_gt = len(gt)
    slots = np.zeros((n_gt + len(match.unmatched_rows), *gt.shape), dtype=bool)
    for p, g in match.pairs:
        slots[g] = pred[p]
    for j, p in enumerate(match.unmatched_rows):
        slots[n_gt + j] = pred[p]
    truth = np.zeros_like(slots)
    if n_gt:
        truth[:n_gt] = gt.masks
    return ~np.any(slots ^ truth, axis=0)


def patch_statistics(pred, gt, unc, patch_size=4):
    """Mean agreement and mean entropy for every retained patch."""
    if patch_size < 1:
        raise ValueError("patch_size must be >= 1")
    if unc.shape != gt.shape:
        raise ShapeMismatchError(f"uncertainty grid {unc.shape} != ground truth grid {gt.shape}")
    agree = patch_means(pixel_agreement(pred, gt), patch_size)
    ent = patch_means(unc.entropy, patch_size)
    fg = pred.union() | gt.union() if len(pred) or len(gt) else np.zeros(gt.shape, bool)
    retained = patch_sums(fg.astype(np.int64), patch_size) > 0
    return PatchStats(agree[retained], ent[retained])


def counts_from_stats(stats, acc_threshold, unc_threshold):
    accurate = stats.mean_agreement > acc_threshold
    uncertain = stats.mean_entropy >= unc_threshold
    return PatchCounts(
        n_ac=int(np.sum(accurate & ~uncertain)),
        n_au=int(np.sum(accurate & uncertain)),
        n_ic=int(np.sum(~accurate & ~uncertain)),
        n_iu=int(np.sum(~accurate & uncertain)),
    )


def patch_counts(pred, gt, unc, patch_size=4, acc_threshold=0.5, unc_threshold=0.05):
    return counts_from_stats(patch_statistics(pred, gt, unc, patch_size), acc_threshold, unc_threshold)


def _ratio(num, den):
    return num / den if den else float("nan")


def conditional_probs(c):
    return ConditionalProbs(
        _ratio(c.n_ac, c.n_ac + c.n_ic),
        _ratio(c.n_iu, c.n_ic + c.n_iu),
        _ratio(c.n_ac + c.n_iu, c.total),
    )


def curve_from_stats(stats, acc_threshold, thresholds):
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if np.any(np.diff(thresholds) < 0):
        raise ValueError("thresholds must be ascending")
    counts = [counts_from_stats(stats, acc_threshold, t) for t in thresholds]
    probs = np.array([conditional_probs(c) for c in counts]).reshape(-1, 3)
    return UncertaintyCurve(thresholds, probs[:, 0], probs[:, 1], probs[:, 2], counts)


def uncertainty_curves(pred, gt, unc, patch_size=4, acc_threshold=0.5, thresholds=None):
    if thresholds is None:
        thresholds = default_thresholds()
    return curve_from_stats(patch_statistics(pred, gt, unc, patch_size), acc_threshold, thresholds)


def pool_stats(stats_list):
    """Concatenate patch statistics of several images into one dataset-level pool."""
    stats_list = list(stats_list)
    if not stats_list:
        return PatchStats(np.zeros(0), np.zeros(0))
    return PatchStats(
        np.concatenate([s.mean_agreement for s in stats_list]),
        np.concatenate([s.mean_entropy for s in stats_list]),
    )


def default_thresholds():
    return np.round(np.arange(0.0, 0.7 + 1e-9, 0.05), 10)
