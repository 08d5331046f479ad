"""Mean-shift post-processing that turns embeddings into instance masks."""

from dataclasses import dataclass

import numpy as np

from .core import OVERLAP, InstanceMasks, connected_components

_BLOCK = 1024


@dataclass(frozen=True)
class MeanShiftConfig:
    bandwidth: float = 2.0
    cluster_threshold: float = 2.0
    max_iterations: int = 100
    convergence_tol: float | None = None  # defaults to 1e-3 * bandwidth
    mode_merge_dist: float | None = None  # defaults to bandwidth / 2
    kernel: str = "flat"
    seed_stride: int = 4

    def __post_init__(self):
        if self.bandwidth <= 0 or self.cluster_threshold <= 0:
            raise ValueError("bandwidth and cluster_threshold must be > 0")
        if self.kernel not in ("flat", "gaussian"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.seed_stride < 1 or self.max_iterations < 1:
            raise ValueError("seed_stride and max_iterations must be >= 1")
        if self.convergence_tol is None:
            object.__setattr__(self, "convergence_tol", 1e-3 * self.bandwidth)
        if self.mode_merge_dist is None:
            object.__setattr__(self, "mode_merge_dist", self.bandwidth / 2.0)
        if self.convergence_tol <= 0 or self.mode_merge_dist <= 0:
            raise ValueError("convergence_tol and mode_merge_dist must be > 0")


def _sq_dists(a, b, b_sq):
    d = (a * a).sum(axis=1)[:, None] + b_sq[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d, 0.0)


def _shift(seeds, points, p_sq, cfg):
    out = np.empty_like(seeds)
    bw_sq = cfg.bandwidth ** 2
    for start in range(0, len(seeds), _BLOCK):
        block = seeds[start:start + _BLOCK]
        d = _sq_dists(block, points, p_sq)
        if cfg.kernel == "flat":
            w = (d <= bw_sq).astype(np.float64)
        else:
            w = np.exp(-d / (2.0 * bw_sq))
        tot = w.sum(axis=1)
        # an empty window cannot occur for flat kernels seeded on data; keep the seed if it does
        moved = (w @ points) / np.where(tot > 0, tot, 1.0)[:, None]
        out[start:start + _BLOCK] = np.where(tot[:, None] > 0, moved, block)
    return out


def mean_shift_modes(points, cfg=MeanShiftConfig()):
    """Converged, merged mean-shift modes, ordered by basin size (largest first).

    Seeds are every ``seed_stride``-th point in input order. Modes closer than
    ``mode_merge_dist`` are merged into their basin-size-weighted mean.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    if len(points) == 0:
        raise ValueError("mean shift needs at least one point")
    p_sq = (points * points).sum(axis=1)
    pos = points[::cfg.seed_stride].copy()
    active = np.ones(len(pos), dtype=bool)
    tol_sq = cfg.convergence_tol ** 2

    for _ in range(cfg.max_iterations):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        new = _shift(pos[idx], points, p_sq, cfg)
        step = ((new - pos[idx]) ** 2).sum(axis=1)
        pos[idx] = new
        active[idx[step < tol_sq]] = False

    # collapse seeds that converged to the same point, then let the largest
    # basins claim nearby modes first; ties broken by seed order
    _, rep, cnt = np.unique(np.round(pos / cfg.convergence_tol), axis=0,
                            return_index=True, return_counts=True)
    rep_order = sorted(zip(rep, cnt), key=lambda rc: (-rc[1], rc[0]))
    merge_sq = cfg.mode_merge_dist ** 2
    modes, mode_w, mode_first = [], [], []
    for r, c in rep_order:
        x = pos[r]
        if modes:
            d = ((np.asarray(modes) - x) ** 2).sum(axis=1)
            j = int(np.argmin(d))
            if d[j] < merge_sq:
                w = mode_w[j] + c
                modes[j] = (modes[j] * mode_w[j] + x * c) / w
                mode_w[j] = w
                mode_first[j] = min(mode_first[j], r)
                continue
        modes.append(x.copy())
        mode_w.append(float(c))
        mode_first.append(r)
    order = sorted(range(len(modes)), key=lambda k: (-mode_w[k], mode_first[k]))
    return np.asarray([modes[k] for k in order])


def assign_instances(emb, sem, modes, cfg=MeanShiftConfig()):
    """Gather foreground pixels within ``cluster_threshold`` of a mode.

    A pixel near several modes goes to the nearest one; exact ties go to the
    lower mode index. Pixels beyond the threshold of every mode stay unlabeled.
    """
    modes = np.atleast_2d(np.asarray(modes, dtype=np.float64))
    if modes.shape[0] == 0:
        raise ValueError("need at least one mode")
    shape = emb.shape
    fg = sem.foreground()
    vecs = emb.vectors[fg]
    if vecs.shape[0] == 0:
        return InstanceMasks.empty(shape)
    d = _sq_dists(vecs, modes, (modes * modes).sum(axis=1))
    nearest = np.argmin(d, axis=1)
    ok = d[np.arange(len(d)), nearest] <= cfg.cluster_threshold ** 2
    labels = np.full(len(vecs), -1)
    labels[ok] = nearest[ok]
    flat = np.full(shape, -1)
    flat[fg] = labels
    present = np.unique(labels[labels >= 0])
    return InstanceMasks(flat[None, :, :] == present[:, None, None])


def resolve_overlaps(masks, sem, overlap_threshold=0.5):
    """Attach overlap pixels to instances by the max-IoU connected component rule.

    Each instance mask is united with the overlap map; of the 8-connected
    components of that union, the one with the largest IoU against the
    original mask replaces it (first component wins ties).
    """
    if len(masks) == 0:
        return masks
    overlap = (sem.probs[..., OVERLAP] >= overlap_threshold) & sem.foreground()
    if not overlap.any():
        return masks
    out = []
    for mk in masks:
        cc = connected_components(mk | overlap, 8)
        n_cc = cc.max()
        inter = np.bincount(cc[mk], minlength=n_cc + 1)[1:]
        size = np.bincount(cc.ravel(), minlength=n_cc + 1)[1:]
        area = mk.sum()
        # component c contains (inter[c]) mask pixels; union with the mask = size + area - inter
        score = inter / (size + area - inter)
        out.append(cc == (int(np.argmax(score)) + 1))
    return InstanceMasks(np.stack(out))


def segment(emb, sem, cfg=MeanShiftConfig(), overlap_threshold=0.5):
    fg = sem.foreground()
    if not fg.any():
        return InstanceMasks.empty(emb.shape)
    modes = mean_shift_modes(emb.vectors[fg], cfg)
    masks = assign_instances(emb, sem, modes, cfg)
    return resolve_overlaps(masks, sem, overlap_threshold)
