"""Instance segmentation benchmark metrics.

Two matching conventions are used:

* counting metrics (``AP_dsb = TP / (TP + FP + FN)`` and recall) use the
  one-to-one matching with the most pairs at or above the IoU threshold,
  ties broken by total IoU;
* the score-swept AP follows the COCO convention: predictions are visited in
  descending score order and greedily take the unmatched ground-truth
  instance of highest IoU >= threshold. AP is the all-point area under the
  precision-recall curve with precision made non-increasing from the right.

Dataset values average per-image values. Images without ground-truth
instances are skipped with a warning.
"""

import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .agglomeration import hungarian_max, pairwise_iou_matrix
from .core import InstanceMasks
from .errors import ShapeMismatchError

IOU_THRESHOLDS = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2))


@dataclass(frozen=True, eq=False)
class ScoredPrediction:
    masks: InstanceMasks
    scores: np.ndarray = None

    def __post_init__(self):
        scores = np.ones(len(self.masks)) if self.scores is None else np.asarray(self.scores, float)
        if scores.shape != (len(self.masks),):
            raise ShapeMismatchError(f"{len(self.masks)} masks but {scores.size} scores")
        object.__setattr__(self, "scores", scores)


class MatchCounts(NamedTuple):
    tp: int
    fp: int
    fn: int
    pairs: list


@dataclass
class MetricReport:
    av_ap: float
    ap50: float
    ap75: float
    recall80: float
    av_ap_dsb: float
    per_threshold: dict = field(default_factory=dict)  # tau -> {"ap", "ap_dsb", "tp", "fp", "fn"}
    n_images: int = 1

    def to_json(self):
        d = asdict(self)
        d["per_threshold"] = {f"{k:.2f}": v for k, v in self.per_threshold.items()}
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d["per_threshold"] = {float(k): v for k, v in d["per_threshold"].items()}
        return cls(**d)

    def headline(self):
        return {
            "avAP[0.5:0.95]": self.av_ap,
            "AP.5": self.ap50,
            "AP.75": self.ap75,
            "Recall.8": self.recall80,
            "avAP_dsb[0.5:0.95]": self.av_ap_dsb,
        }


def match_at_iou(pred, gt, iou_thr, iou_matrix=None):
    if not 0 < iou_thr <= 1:
        raise ValueError("IoU threshold must lie in (0, 1]")
    ious = pairwise_iou_matrix(pred, gt) if iou_matrix is None else iou_matrix
    pairs = []
    if ious.size:
        # weight 1 per eligible pair plus an IoU bonus below 1/2 in total:
        # the most true positives win, total IoU breaks ties
        n = min(ious.shape)
        weights = np.where(ious >= iou_thr, 1.0 + ious / (2 * n), 0.0)
        pairs = hungarian_max(weights).pairs
    tp = len(pairs)
    return MatchCounts(tp, len(pred) - tp, len(gt) - tp, pairs)


def average_precision(ious, scores, iou_thr):
    """All-point interpolated AP of score-ranked predictions (greedy COCO matching)."""
    n_pred, n_gt = ious.shape
    if n_gt == 0:
        raise ValueError("AP is undefined without ground truth")
    if n_pred == 0:
        return 0.0
    order = np.argsort(-np.asarray(scores), kind="stable")
    taken = np.zeros(n_gt, dtype=bool)
    hits = np.zeros(n_pred)
    for rank, p in enumerate(order):
        cand = np.where(taken, -1.0, ious[p])
        g = int(np.argmax(cand))
        if cand[g] >= iou_thr:
            taken[g] = True
            hits[rank] = 1.0
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, n_pred + 1)
    recall = tp / n_gt
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(steps * precision))


def evaluate(pred, gt, thresholds=IOU_THRESHOLDS):
    """Metrics for one image. Returns ``None`` (with a warning) when ``gt`` is empty."""
    if not isinstance(pred, ScoredPrediction):
        pred = ScoredPrediction(pred)
    if len(gt) == 0:
        warnings.warn("image without ground-truth instances excluded from evaluation")
        return None
    ious = pairwise_iou_matrix(pred.masks, gt)
    table = {}
    for tau in thresholds:
        m = match_at_iou(pred.masks, gt, tau, ious)
        table[float(tau)] = {
            "ap": average_precision(ious, pred.scores, tau),
            "ap_dsb": m.tp / (m.tp + m.fp + m.fn),
            "tp": m.tp, "fp": m.fp, "fn": m.fn,
        }
    rec = match_at_iou(pred.masks, gt, 0.8, ious)
    return MetricReport(
        av_ap=float(np.mean([v["ap"] for v in table.values()])),
        ap50=average_precision(ious, pred.scores, 0.5),
        ap75=average_precision(ious, pred.scores, 0.75),
        recall80=rec.tp / len(gt),
        av_ap_dsb=float(np.mean([v["ap_dsb"] for v in table.values()])),
        per_threshold=table,
    )


def aggregate(reports):
    """Average per-image reports; ``None`` entries (no ground truth) are skipped."""
    reports = [r for r in reports if r is not None]
    if not reports:
        raise ValueError("no image with ground truth to aggregate")
    mean = lambda vals: float(np.mean(vals))
    taus = list(reports[0].per_threshold)
    table = {
        t: {k: mean([r.per_threshold[t][k] for r in reports]) for k in ("ap", "ap_dsb")}
        | {k: int(sum(r.per_threshold[t][k] for r in reports)) for k in ("tp", "fp", "fn")}
        for t in taus
    }
    return MetricReport(
        av_ap=mean([r.av_ap for r in reports]),
        ap50=mean([r.ap50 for r in reports]),
        ap75=mean([r.ap75 for r in reports]),
        recall80=mean([r.recall80 for r in reports]),
        av_ap_dsb=mean([r.av_ap_dsb for r in reports]),
        per_threshold=table,
        n_images=len(reports),
    )


def evaluate_dataset(pairs):
    """``pairs`` is an iterable of ``(ScoredPrediction | InstanceMasks, InstanceMasks)``."""
    return aggregate(evaluate(p, g) for p, g in pairs)


def format_table(rows):
    """Plain-text table of ``(label, MetricReport)`` rows in the benchmark column layout."""
    cols = ["avAP[0.5:0.95]", "AP.5", "AP.75", "Recall.8", "avAP_dsb[0.5:0.95]"]
    label_w = max([len("Model")] + [len(str(lbl)) for lbl, _ in rows])
    lines = ["  ".join([f"{'Model':<{label_w}}"] + [f"{c:>18}" for c in cols])]
    for lbl, rep in rows:
        vals = rep.headline()
        lines.append("  ".join([f"{str(lbl):<{label_w}}"] + [f"{vals[c]:>18.3f}" for c in cols]))
    return "\n".join(lines)
