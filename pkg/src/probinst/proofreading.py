"""Simulated uncertainty-guided proofreading.

A proofreader visits the patches of highest mean entropy and replaces the
predicted instances there with ground truth. Two rules make a swap safe:

* the inspected region is the peak patch grown by one patch in every
  direction;
* swaps act on whole *overlap groups*: connected components of the graph
  whose nodes are predicted and ground-truth instances and whose edges join
  any two overlapping masks. Every group touching the region has all its
  predictions removed and all its ground-truth instances inserted.

Because groups never overlap each other, a swap can only turn its group
into an exact copy of the ground truth, and repeating it changes nothing.

``simulate`` runs sequentially by default: after each inspection the
entropy of the inspected region and of the swapped groups is cleared
(those pixels are now certain) and the next peak is searched on the
updated maps. ``sequential=False`` instead ranks all peaks once up front.
"""

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components as graph_components

from .core import InstanceMasks, UncertaintyMap
from .errors import ShapeMismatchError
from .evaluation import ScoredPrediction, aggregate, evaluate
from .uncertainty import patch_means


@dataclass(frozen=True)
class PeakPatch:
    sample_id: object
    patch_row: int
    patch_col: int
    mean_entropy: float

    def __post_init__(self):
        if self.mean_entropy < 0:
            raise ValueError("mean entropy must be >= 0")


def _sort_key(peak):
    return (-peak.mean_entropy, peak.sample_id, peak.patch_row, peak.patch_col)


def sample_peaks(sample_id, entropy, patch_size=4, local_max=True):
    means = patch_means(entropy, patch_size)
    candidate = means > 0
    if local_max:
        neigh = ndimage.maximum_filter(means, size=3, mode="constant", cval=-np.inf)
        candidate &= means >= neigh
    rows, cols = np.nonzero(candidate)
    peaks = [PeakPatch(sample_id, int(r), int(c), float(means[r, c])) for r, c in zip(rows, cols)]
    return sorted(peaks, key=_sort_key)


def top_uncertainty_peaks(dataset, k, patch_size=4, local_max=True):
    """Global top-``k`` patches by mean entropy over ``(sample_id, UncertaintyMap)`` pairs.

    With ``local_max`` a patch must be at least as uncertain as its eight
    neighbours. Zero-entropy patches never qualify. Ties are broken by
    ``(sample_id, row, col)``.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    peaks = []
    for sample_id, unc in dataset:
        peaks.extend(sample_peaks(sample_id, unc.entropy, patch_size, local_max))
    peaks.sort(key=_sort_key)
    return peaks[:k]


def peak_region(shape, peak, patch_size=4):
    """Pixel mask of the peak patch dilated by one patch in the 8-neighbourhood."""
    region = np.zeros(shape, dtype=bool)
    r0 = max(0, (peak.patch_row - 1) * patch_size)
    c0 = max(0, (peak.patch_col - 1) * patch_size)
    region[r0:(peak.patch_row + 2) * patch_size, c0:(peak.patch_col + 2) * patch_size] = True
    return region


def overlap_groups(pred, gt):
    """Component id per prediction and per ground-truth instance of the overlap graph."""
    n_p = len(pred)
    masks = np.concatenate([pred.masks, gt.masks]) if len(gt) else pred.masks
    n = len(masks)
    if n == 0:
        return np.zeros(0, int), np.zeros(0, int)
    flat = masks.reshape(n, -1).astype(np.float32)
    adj = (flat @ flat.T) > 0
    _, comp = graph_components(csr_matrix(adj), directed=False)
    return comp[:n_p], comp[n_p:]


def swap_region(pred, gt, region):
    """Indices ``(kept_pred, inserted_gt, removed_pred)`` for swapping the groups touching ``region``."""
    if pred.shape != gt.shape or region.shape != gt.shape:
        raise ShapeMismatchError("prediction, ground truth and region must share one grid")
    pg, gg = overlap_groups(pred, gt)
    touched = set()
    for comp, masks in ((pg, pred.masks), (gg, gt.masks)):
        for i, m in enumerate(masks):
            if np.any(m & region):
                touched.add(int(comp[i]))
    removed = [i for i in range(len(pred)) if int(pg[i]) in touched]
    inserted = [j for j in range(len(gt)) if int(gg[j]) in touched]
    kept = [i for i in range(len(pred)) if int(pg[i]) not in touched]
    return kept, inserted, removed


def apply_corrections(pred, gt, peaks, patch_size=4, scores=None):
    """Replace the overlap groups around ``peaks`` with their ground truth.

    Untouched predictions keep their order and come first; inserted
    ground-truth masks follow in ground-truth order. If ``scores`` is given,
    returns ``(masks, scores)`` with score 1.0 for inserted masks.
    """
    region = np.zeros(gt.shape, dtype=bool)
    for peak in peaks:
        region |= peak_region(gt.shape, peak, patch_size)
    kept, inserted, _ = swap_region(pred, gt, region)
    out = InstanceMasks.from_list([pred[i] for i in kept] + [gt[j] for j in inserted], gt.shape)
    if scores is None:
        return out
    new_scores = np.concatenate([np.asarray(scores, float)[kept], np.ones(len(inserted))])
    return out, new_scores


@dataclass
class SimulationRow:
    k: int
    corrections_used: int
    av_ap: float
    ap50: float
    ap75: float
    recall80: float
    av_ap_dsb: float


def _report_row(k, used, preds, gts):
    rep = aggregate(evaluate(p, g) for p, g in zip(preds, gts))
    return SimulationRow(k, used, rep.av_ap, rep.ap50, rep.ap75, rep.recall80, rep.av_ap_dsb)


def simulate(dataset, ks=(0, 5, 10, 15, 20), patch_size=4, local_max=True, sequential=True):
    """Evaluate after ``k`` guided corrections for each ``k`` in ``ks``.

    ``dataset`` is a list of ``(pred, gt, unc)`` with ``pred`` a
    ``ScoredPrediction`` (or ``InstanceMasks``, scored 1.0) and ``unc`` an
    ``UncertaintyMap``. A ``k = 0`` baseline row is always included.
    """
    ks = sorted(set(int(k) for k in ks) | {0})
    if ks[0] < 0:
        raise ValueError("ks must be >= 0")
    preds = [p if isinstance(p, ScoredPrediction) else ScoredPrediction(p) for p, _, _ in dataset]
    gts = [g for _, g, _ in dataset]
    entropies = [np.array(u.entropy, dtype=np.float64) for _, _, u in dataset]
    rows = []
    if sequential:
        peaks = [sample_peaks(i, e, patch_size, local_max) for i, e in enumerate(entropies)]
        used = 0
        for k in ks:
            while used < k:
                cands = [p[0] for p in peaks if p]
                if not cands:
                    break
                peak = min(cands, key=_sort_key)
                i = peak.sample_id
                region = peak_region(gts[i].shape, peak, patch_size)
                kept, inserted, removed = swap_region(preds[i].masks, gts[i], region)
                cleared = region.copy()
                for j in removed:
                    cleared |= preds[i].masks[j]
                for j in inserted:
                    cleared |= gts[i][j]
                preds[i] = ScoredPrediction(
                    InstanceMasks.from_list([preds[i].masks[j] for j in kept] + [gts[i][j] for j in inserted],
                                            gts[i].shape),
                    np.concatenate([preds[i].scores[kept], np.ones(len(inserted))]),
                )
                entropies[i][cleared] = 0.0
                peaks[i] = sample_peaks(i, entropies[i], patch_size, local_max)
                used += 1
            rows.append(_report_row(k, used, preds, gts))
    else:
        ranked = top_uncertainty_peaks(
            [(i, UncertaintyMap(e)) for i, e in enumerate(entropies)], ks[-1], patch_size, local_max)
        for k in ks:
            chosen = ranked[:k]
            out = []
            for i, (p, g) in enumerate(zip(preds, gts)):
                mine = [pk for pk in chosen if pk.sample_id == i]
                masks, scores = apply_corrections(p.masks, g, mine, patch_size, p.scores)
                out.append(ScoredPrediction(masks, scores))
            rows.append(_report_row(k, len(chosen), out, gts))
    return rows


def rows_to_csv(rows):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(asdict(rows[0])), lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow(asdict(r))
    return buf.getvalue()


def rows_to_json(rows):
    return json.dumps([asdict(r) for r in rows], indent=2)
