"""Fuse posterior draws of instance masks into per-instance probability maps.

The draw with the most instances seeds the base set. Every other draw is
matched against the current base by an IoU-maximizing assignment; matched
masks are added to that instance's count grid and the base mask grows to the
union. Draw instances without a positive-IoU partner open new tracks (the
method leaves their fate open; dropping them would lose instances that are
missing from the base draw). Counts divided by the number of draws give
per-pixel membership probabilities.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import InstanceMasks, ProbabilisticInstanceMap
from .errors import EmptyInputError, ShapeMismatchError


@dataclass(frozen=True)
class Assignment:
    pairs: list
    unmatched_rows: list = field(default_factory=list)
    unmatched_cols: list = field(default_factory=list)

    def total(self, matrix):
        return float(sum(matrix[i, j] for i, j in self.pairs))


def pairwise_iou_matrix(a, b):
    if a.shape != b.shape:
        raise ShapeMismatchError(f"instance sets live on different grids: {a.shape} vs {b.shape}")
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    fa = a.masks.reshape(len(a), -1).astype(np.float32)
    fb = b.masks.reshape(len(b), -1).astype(np.float32)
    # float32 products of 0/1 vectors are exact integer counts up to 2**24 pixels
    inter = (fa @ fb.T).astype(np.float64)
    union = fa.sum(axis=1, dtype=np.float64)[:, None] + fb.sum(axis=1, dtype=np.float64)[None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def hungarian_max(matrix):
    """Maximum-weight one-to-one partial matching on a rectangular matrix.

    Pairs whose entry is not positive are returned as unmatched: a zero-IoU
    "match" carries no information.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeMismatchError("assignment needs a 2-D matrix")
    if not np.all(np.isfinite(m)):
        raise ValueError("assignment matrix must be finite")
    n_rows, n_cols = m.shape
    pairs = []
    if n_rows and n_cols:
        # negative entries can always be left unmatched, so they act like 0
        rows, cols = linear_sum_assignment(np.maximum(m, 0.0), maximize=True)
        pairs = [(int(r), int(c)) for r, c in zip(rows, cols) if m[r, c] > 0]
    matched_r = {r for r, _ in pairs}
    matched_c = {c for _, c in pairs}
    return Assignment(
        pairs=sorted(pairs),
        unmatched_rows=[r for r in range(n_rows) if r not in matched_r],
        unmatched_cols=[c for c in range(n_cols) if c not in matched_c],
    )


def agglomerate_draws(draws):
    """Combine a list of per-draw ``InstanceMasks`` into a ``ProbabilisticInstanceMap``."""
    draws = list(draws)
    if not draws:
        raise EmptyInputError("agglomeration needs at least one draw")
    shape = draws[0].shape
    for d in draws:
        if d.shape != shape:
            raise ShapeMismatchError(f"draw grid {d.shape} != {shape}")
    n_draws = len(draws)
    # argmax returns the lowest index among ties
    base_idx = int(np.argmax([len(d) for d in draws]))

    counts = [m.astype(np.int32) for m in draws[base_idx]]
    base = [m.copy() for m in draws[base_idx]]
    for t, draw in enumerate(draws):
        if t == base_idx or len(draw) == 0:
            continue
        if base:
            current = InstanceMasks.from_list(base, shape)
            match = hungarian_max(pairwise_iou_matrix(current, draw))
            pairs, unmatched = match.pairs, match.unmatched_cols
        else:
            pairs, unmatched = [], list(range(len(draw)))
        for b, d in pairs:
            counts[b] += draw[d]
            base[b] |= draw[d]
        for d in unmatched:
            counts.append(draw[d].astype(np.int32))
            base.append(draw[d].copy())

    if not counts:
        return ProbabilisticInstanceMap(np.zeros((0, *shape), np.int32), n_draws)
    return ProbabilisticInstanceMap(np.stack(counts), n_draws)


def _binarize(prob_map, theta):
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    if len(prob_map) == 0:
        return InstanceMasks.empty(prob_map.shape), np.zeros(0, dtype=int)
    # compare on integer counts so that k/T == theta is exact
    need = np.ceil(theta * prob_map.n_draws - 1e-9)
    masks = prob_map.counts >= need
    keep = np.flatnonzero(masks.reshape(len(masks), -1).any(axis=1))
    return InstanceMasks(masks[keep]), keep


def binarize(prob_map, theta=0.75):
    """Per instance, keep pixels with probability >= theta. Empty results are dropped."""
    return _binarize(prob_map, theta)[0]


def binarize_scored(prob_map, theta=0.75):
    """Binarize and score each surviving instance by its mean probability over its support."""
    masks, src = _binarize(prob_map, theta)
    probs = prob_map.probs
    scores = np.array([probs[k][mk].mean() for k, mk in zip(src, masks)])
    return masks, scores
