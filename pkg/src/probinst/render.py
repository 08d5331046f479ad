"""PNG previews of masks, probability maps and entropy maps."""

from pathlib import Path

import numpy as np
from PIL import Image

from .losses import bernoulli_entropy

_LN2 = float(bernoulli_entropy(0.5))


def _palette(n, seed=3):
    rng = np.random.default_rng(seed)
    return rng.integers(60, 256, size=(max(n, 1), 3), dtype=np.uint8)


def masks_rgb(masks):
    h, w = masks.shape
    img = np.zeros((h, w, 3), dtype=np.float64)
    cover = np.zeros((h, w))
    for m, c in zip(masks, _palette(len(masks))):
        img[m] += c
        cover[m] += 1
    img[cover > 0] /= cover[cover > 0, None]
    return img.astype(np.uint8)


def gray_rgb(values, vmax):
    v = np.clip(np.asarray(values, float) / vmax, 0, 1) if vmax > 0 else np.zeros(np.shape(values))
    g = (255 * v).astype(np.uint8)
    return np.stack([g, g, g], axis=-1)


def render_sample(path, gt, pred, prob=None, entropy=None, gap=4):
    """Side-by-side panel: ground truth | prediction | max probability | entropy."""
    panels = [masks_rgb(gt), masks_rgb(pred)]
    if prob is not None:
        pmax = prob.probs.max(axis=0) if len(prob) else np.zeros(gt.shape)
        panels.append(gray_rgb(pmax, 1.0))
    if entropy is not None:
        panels.append(gray_rgb(entropy.entropy, _LN2))
    h = gt.shape[0]
    sep = np.full((h, gap, 3), 255, dtype=np.uint8)
    row = np.concatenate(sum(([p, sep] for p in panels), [])[:-1], axis=1)
    Image.fromarray(row).save(Path(path), format="PNG")
