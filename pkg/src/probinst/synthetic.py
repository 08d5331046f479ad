"""Seeded stand-ins for a trained network: worm scenes, embeddings and posterior draws.

All randomness comes from numpy's PCG64 bit generator. Per-sample streams
are derived with ``SeedSequence([seed, sample_index, stream])`` so every
sample (and every stage of it) can be regenerated on its own.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import EmbeddingMap, InstanceMasks, SemanticMap

STREAM_SCENE, STREAM_DRAWS, STREAM_EMBED = 0, 1, 2


def make_rng(seed, *path):
    """PCG64 generator for ``seed`` and an integer sub-stream path."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, path)])))


@dataclass(frozen=True)
class SceneConfig:
    height: int = 128
    width: int = 128
    n_instances: int = 6
    worm_length_range: tuple = (40, 90)
    worm_thickness: int = 5
    overlap_fraction: float = 0.3
    rng_seed: int = 0
    max_retries: int = 200

    def __post_init__(self):
        if self.worm_thickness < 1 or self.n_instances < 0:
            raise ValueError("need worm_thickness >= 1 and n_instances >= 0")
        if not 0 <= self.overlap_fraction <= 1:
            raise ValueError("overlap_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class NoiseConfig:
    embedding_sigma: float = 0.3
    center_separation: float = 8.0
    split_rate: float = 0.0
    merge_rate: float = 0.0
    dropout_rate: float = 0.0
    boundary_jitter: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("split_rate", "merge_rate", "dropout_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.center_separation <= 0 or self.embedding_sigma < 0 or self.boundary_jitter < 0:
            raise ValueError("invalid noise configuration")


@dataclass
class DrawSet:
    draws: list
    events: list = field(default_factory=list)  # provenance: dicts with draw, kind, instances

    def __post_init__(self):
        if not self.draws:
            raise ValueError("a draw set needs at least one draw")
        if len({d.shape for d in self.draws}) != 1:
            raise ValueError("all draws must share one grid")

    def __len__(self):
        return len(self.draws)

    def __iter__(self):
        return iter(self.draws)

    def error_instances(self):
        """Ground-truth instance indices touched by any split, merge or removal event."""
        return sorted({i for ev in self.events if ev["kind"] != "jitter" for i in ev["instances"]})


def _disk(radius):
    r = int(np.ceil(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (yy ** 2 + xx ** 2) <= radius ** 2 + 1e-9


def _worm(rng, cfg, start=None):
    h, w = cfg.height, cfg.width
    length = int(rng.integers(cfg.worm_length_range[0], cfg.worm_length_range[1] + 1))
    if start is None:
        y, x = rng.uniform(0, h), rng.uniform(0, w)
    else:
        y, x = start
    heading = rng.uniform(0, 2 * np.pi)
    turn = 0.0
    pts = []
    for _ in range(length):
        pts.append((y, x))
        # smoothed random walk: the turning rate itself random-walks
        turn = 0.8 * turn + rng.normal(0.0, 0.06)
        heading += turn
        y += np.sin(heading)
        x += np.cos(heading)
    # centre the walk on the start so a start point lies mid-body
    pts = np.asarray(pts)
    pts -= pts[len(pts) // 2] - pts[0]
    ij = np.round(pts).astype(int)
    inside = (ij[:, 0] >= 0) & (ij[:, 0] < h) & (ij[:, 1] >= 0) & (ij[:, 1] < w)
    if inside.mean() < 0.95:
        return None
    line = np.zeros((h, w), dtype=bool)
    line[ij[inside, 0], ij[inside, 1]] = True
    return ndimage.binary_dilation(line, structure=_disk((cfg.worm_thickness - 1) / 2.0))


def generate_scene(cfg=SceneConfig(), rng=None):
    """Worm-like ground truth and its one-hot semantic map.

    Instances chosen to cross (probability ``overlap_fraction``) must overlap
    an earlier worm; the others must keep a one-pixel gap to all earlier
    worms. Overlaps are capped at a third of either worm.
    """
    rng = make_rng(cfg.rng_seed, STREAM_SCENE) if rng is None else rng
    shape = (cfg.height, cfg.width)
    masks = []
    for k in range(cfg.n_instances):
        want_cross = bool(masks) and rng.random() < cfg.overlap_fraction
        placed = None
        for _ in range(cfg.max_retries):
            start = None
            if want_cross:
                host = masks[int(rng.integers(len(masks)))]
                ys, xs = np.nonzero(host)
                j = int(rng.integers(len(ys)))
                start = (float(ys[j]), float(xs[j]))
            cand = _worm(rng, cfg, start)
            if cand is None:
                continue
            if want_cross:
                shared = [np.count_nonzero(cand & m) for m in masks]
                ok = any(shared) and all(
                    s <= min(cand.sum(), m.sum()) / 3 for s, m in zip(shared, masks))
            else:
                grown = ndimage.binary_dilation(cand)
                ok = not any(np.any(grown & m) for m in masks)
            if ok:
                placed = cand
                break
        if placed is None:
            warnings.warn(f"could only place {len(masks)} of {cfg.n_instances} instances")
            break
        masks.append(placed)
    gt = InstanceMasks.from_list(masks, shape)
    return gt, SemanticMap.from_masks(gt)


def planted_centers(n, dim, separation, rng):
    """``n`` distinct points of the integer lattice scaled by ``separation``."""
    span = max(1, int(np.ceil((4 * n) ** (1.0 / dim))))
    seen, out = set(), []
    while len(out) < n:
        v = tuple(int(a) for a in rng.integers(-span, span + 1, size=dim))
        if v not in seen:
            seen.add(v)
            out.append(v)
    return separation * np.asarray(out, dtype=np.float64).reshape(n, dim)


def simulate_embeddings(gt, cfg=NoiseConfig(), dim=16, rng=None):
    """Noisy embeddings around planted per-instance centers.

    Pixels covered by several instances take the first covering instance's
    center. Background pixels sit far from every center.
    """
    if dim < 1:
        raise ValueError("embedding dimension must be >= 1")
    rng = make_rng(cfg.rng_seed, STREAM_EMBED) if rng is None else rng
    h, w = gt.shape
    centers = planted_centers(len(gt), dim, cfg.center_separation, rng)
    far = 10.0 * cfg.center_separation * (1 + np.abs(centers).max(initial=0.0) / cfg.center_separation)
    vec = np.full((h, w, dim), far)
    owner = np.full((h, w), -1)
    for k in range(len(gt) - 1, -1, -1):
        owner[gt[k]] = k
    fg = owner >= 0
    vec[fg] = centers[owner[fg]]
    vec += rng.normal(0.0, cfg.embedding_sigma, size=vec.shape) if cfg.embedding_sigma else 0.0
    return EmbeddingMap(vec)


def _split(mask, rng):
    ys, xs = np.nonzero(mask)
    pts = np.stack([ys, xs], axis=1).astype(np.float64)
    if len(pts) < 2:
        return None
    centered = pts - pts.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    axis = vt[0]
    # the sign of a singular vector is implementation-defined; pin it
    axis = axis if axis[np.argmax(np.abs(axis))] > 0 else -axis
    proj = centered @ axis
    cut = np.quantile(proj, rng.uniform(0.3, 0.7))
    a = np.zeros_like(mask)
    a[ys[proj <= cut], xs[proj <= cut]] = True
    b = mask & ~a
    if not a.any() or not b.any():
        return None
    return a, b


def nearest_partners(gt):
    """For each instance, the other instance with the smallest pixel gap (lowest index on ties)."""
    n = len(gt)
    partner = np.full(n, -1)
    if n < 2:
        return partner
    dists = np.stack([ndimage.distance_transform_edt(~m) for m in gt])
    for i in range(n):
        gaps = [dists[j][gt[i]].min() if j != i else np.inf for j in range(n)]
        partner[i] = int(np.argmin(gaps))
    return partner


def _jitter(mask, radius):
    if radius > 0:
        return ndimage.binary_dilation(mask, iterations=radius)
    if radius < 0:
        return ndimage.binary_erosion(mask, iterations=-radius)
    return mask


def simulate_draws(gt, cfg=NoiseConfig(), n_draws=8, rng=None):
    """Perturbed copies of ``gt`` standing in for posterior predictive draws.

    Per draw and instance, one event fires at most, checked in the order
    removal, split, merge (with the nearest instance). A merge absorbs the
    partner whole, overriding the partner's own split. Boundary jitter then
    erodes or dilates each resulting mask by up to ``boundary_jitter`` pixels.
    Applied events are logged in ``DrawSet.events``.
    """
    if n_draws < 1:
        raise ValueError("need at least one draw")
    rng = make_rng(cfg.rng_seed, STREAM_DRAWS) if rng is None else rng
    n = len(gt)
    partner = nearest_partners(gt) if cfg.merge_rate > 0 else np.full(n, -1)
    draws, events = [], []
    for t in range(n_draws):
        u = rng.random((n, 3))
        dropped = u[:, 0] < cfg.dropout_rate
        split = ~dropped & (u[:, 1] < cfg.split_rate)
        merge = ~dropped & ~split & (u[:, 2] < cfg.merge_rate) & (partner >= 0)
        # union-find over merges whose partner survives
        group = list(range(n))

        def find(i):
            while group[i] != i:
                i = group[i]
            return i

        for i in np.flatnonzero(merge):
            j = partner[i]
            if dropped[j]:
                continue
            group[find(i)] = find(j)
            events.append({"draw": t, "kind": "merge", "instances": sorted([int(i), int(j)])})
        for i in np.flatnonzero(dropped):
            events.append({"draw": t, "kind": "removal", "instances": [int(i)]})

        roots = [find(i) for i in range(n)]
        pieces = []
        emitted = set()
        for i in range(n):
            if dropped[i]:
                continue
            members = [j for j in range(n) if roots[j] == roots[i] and not dropped[j]]
            if len(members) > 1:
                if roots[i] in emitted:
                    continue
                emitted.add(roots[i])
                pieces.append(np.any(gt.masks[members], axis=0))
            elif split[i]:
                halves = _split(gt[i], rng)
                if halves is None:
                    pieces.append(gt[i].copy())
                else:
                    pieces.extend(halves)
                    events.append({"draw": t, "kind": "split", "instances": [i]})
            else:
                pieces.append(gt[i].copy())
        if cfg.boundary_jitter:
            radii = rng.integers(-cfg.boundary_jitter, cfg.boundary_jitter + 1, size=len(pieces))
            pieces = [_jitter(p, int(r)) for p, r in zip(pieces, radii)]
        draws.append(InstanceMasks.from_list(pieces, gt.shape))
    return DrawSet(draws, events)
