"""Grid, mask and embedding containers plus elementary mask algebra.

All containers wrap dense numpy arrays and freeze them on construction.
Instance masks are kept as a ``(K, H, W)`` boolean stack so that
overlapping instances can be represented.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ShapeMismatchError

BACKGROUND, FOREGROUND, OVERLAP = 0, 1, 2

_STRUCTURE = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


def _frozen(arr):
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


def _check_hw(shape):
    if len(shape) != 2 or shape[0] < 1 or shape[1] < 1:
        raise ShapeMismatchError(f"grid shape must be (height, width) >= 1, got {shape}")


@dataclass(frozen=True, eq=False)
class InstanceMasks:
    """Ordered set of binary instance masks over one ``(H, W)`` grid.

    Empty masks are dropped at construction. Masks may overlap.
    """

    masks: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.masks)
        if m.ndim != 3:
            raise ShapeMismatchError(f"mask stack must be (K, H, W), got ndim={m.ndim}")
        _check_hw(m.shape[1:])
        m = m.astype(bool)
        keep = m.any(axis=(1, 2))
        object.__setattr__(self, "masks", _frozen(m[keep]))

    @classmethod
    def empty(cls, shape):
        return cls(np.zeros((0, *shape), dtype=bool))

    @classmethod
    def from_list(cls, masks, shape):
        masks = list(masks)
        if not masks:
            return cls.empty(shape)
        for mk in masks:
            if np.shape(mk) != tuple(shape):
                raise ShapeMismatchError(f"mask shape {np.shape(mk)} != {tuple(shape)}")
        return cls(np.stack([np.asarray(mk, dtype=bool) for mk in masks]))

    @property
    def shape(self):
        return self.masks.shape[1:]

    def __len__(self):
        return self.masks.shape[0]

    def __iter__(self):
        return iter(self.masks)

    def __getitem__(self, i):
        return self.masks[i]

    def areas(self):
        return self.masks.sum(axis=(1, 2))

    def union(self):
        return self.masks.any(axis=0)

    def coverage(self):
        """Number of instances covering each pixel."""
        return self.masks.sum(axis=0)

    def to_labelmap(self):
        """Flatten to a label map (ids 1..K). Overlap pixels take the highest index."""
        labels = np.zeros(self.shape, dtype=np.int32)
        for k, mk in enumerate(self.masks, start=1):
            labels[mk] = k
        return labels

    def subset(self, indices):
        idx = np.asarray(list(indices), dtype=int)
        return InstanceMasks(self.masks[idx] if idx.size else np.zeros((0, *self.shape), bool))

    def same_instances(self, other):
        """True if both hold the same set of masks, ignoring order."""
        if self.shape != other.shape or len(self) != len(other):
            return False
        key = lambda m: m.tobytes()
        return sorted(map(key, self.masks)) == sorted(map(key, other.masks))


@dataclass(frozen=True, eq=False)
class EmbeddingMap:
    vectors: np.ndarray  # (H, W, D)

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] < 1:
            raise ShapeMismatchError(f"embeddings must be (H, W, D) with D >= 1, got {v.shape}")
        _check_hw(v.shape[:2])
        if not np.all(np.isfinite(v)):
            raise ValueError("embedding vectors must be finite")
        object.__setattr__(self, "vectors", _frozen(v))

    @property
    def shape(self):
        return self.vectors.shape[:2]

    @property
    def dim(self):
        return self.vectors.shape[2]


@dataclass(frozen=True, eq=False)
class SemanticMap:
    """Per-pixel (background, foreground, overlap) probabilities."""

    probs: np.ndarray  # (H, W, 3)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 3 or p.shape[2] != 3:
            raise ShapeMismatchError(f"semantic map must be (H, W, 3), got {p.shape}")
        _check_hw(p.shape[:2])
        if np.any(p < 0) or np.any(p > 1) or not np.allclose(p.sum(axis=2), 1.0, atol=1e-6):
            raise ValueError("semantic triples must lie in [0, 1] and sum to 1")
        object.__setattr__(self, "probs", _frozen(p))

    @classmethod
    def from_logits(cls, logits):
        z = np.asarray(logits, dtype=np.float64)
        z = z - z.max(axis=2, keepdims=True)
        e = np.exp(z)
        return cls(e / e.sum(axis=2, keepdims=True))

    @classmethod
    def from_masks(cls, masks):
        """One-hot map: overlap where >= 2 instances cover a pixel, foreground where 1."""
        cov = masks.coverage()
        cls_idx = np.where(cov >= 2, OVERLAP, np.where(cov == 1, FOREGROUND, BACKGROUND))
        return cls(np.eye(3)[cls_idx])

    @property
    def shape(self):
        return self.probs.shape[:2]

    def argmax(self):
        return self.probs.argmax(axis=2)

    def foreground(self):
        """Pixels whose most likely class is not background."""
        return self.argmax() != BACKGROUND


@dataclass(frozen=True, eq=False)
class ProbabilisticInstanceMap:
    """Per-instance draw counts; probabilities are ``counts / n_draws``.

    Storing integer counts keeps every probability exactly ``k / T``.
    """

    counts: np.ndarray  # (K, H, W) integers in [0, T]
    n_draws: int

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 3:
            raise ShapeMismatchError(f"count stack must be (K, H, W), got ndim={c.ndim}")
        if self.n_draws < 1:
            raise ValueError("n_draws must be >= 1")
        if c.size and (c.min() < 0 or c.max() > self.n_draws):
            raise ValueError("counts must lie in [0, n_draws]")
        object.__setattr__(self, "counts", _frozen(c.astype(np.int32)))

    @property
    def shape(self):
        return self.counts.shape[1:]

    def __len__(self):
        return self.counts.shape[0]

    @property
    def probs(self):
        return self.counts / self.n_draws


@dataclass(frozen=True, eq=False)
class UncertaintyMap:
    entropy: np.ndarray  # (H, W)

    def __post_init__(self):
        e = np.asarray(self.entropy, dtype=np.float64)
        if e.ndim != 2:
            raise ShapeMismatchError(f"entropy map must be 2-D, got {e.shape}")
        object.__setattr__(self, "entropy", _frozen(e))

    @property
    def shape(self):
        return self.entropy.shape


def iou(a, b):
    """Intersection over union of two binary masks; 0 when both are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def masks_from_labelmap(labels):
    labels = np.asarray(labels)
    _check_hw(labels.shape)
    ids = np.unique(labels)
    ids = ids[ids != 0]
    if ids.size == 0:
        return InstanceMasks.empty(labels.shape)
    return InstanceMasks(labels[None, :, :] == ids[:, None, None])


def connected_components(mask, connectivity=8):
    """Label connected foreground regions 1..K in row-major first-encounter order."""
    if connectivity not in _STRUCTURE:
        raise ValueError("connectivity must be 4 or 8")
    labels, _ = ndimage.label(np.asarray(mask, dtype=bool), structure=_STRUCTURE[connectivity])
    return labels.astype(np.int32)
