"""Discriminative embedding loss with analytic gradients, and the Concrete-dropout regularizer.

The discriminative loss has three terms over instance means ``mu_c``:

* variance: ``1/C sum_c 1/N_c sum_i ||mu_c - e_i||^2`` (no hinge),
* distance: ``1/(C(C-1)) sum_{A != B} [2 delta_d - dist(mu_A, mu_B)]_+^2``,
* regularizer: ``1/C sum_c ||mu_c||^2``.

``dist`` is the squared euclidean distance by default
(``hinge_on_squared_norm=True``); the plain norm is available for comparison.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import EmptyInputError, ShapeMismatchError


@dataclass(frozen=True)
class DiscriminativeConfig:
    delta_d: float = 4.0
    w_var: float = 1.0
    w_dist: float = 1.0
    w_reg: float = 0.001
    hinge_on_squared_norm: bool = True

    def __post_init__(self):
        if self.delta_d <= 0:
            raise ValueError("delta_d must be > 0")
        if min(self.w_var, self.w_dist, self.w_reg) < 0:
            raise ValueError("loss weights must be >= 0")


class DiscriminativeLoss(NamedTuple):
    total: float
    l_var: float
    l_dist: float
    l_reg: float
    centers: np.ndarray


@dataclass(frozen=True)
class ConcreteLayerSpec:
    weight_sq_norm: float
    p: float
    f: int

    def __post_init__(self):
        if self.weight_sq_norm < 0:
            raise ValueError("weight_sq_norm must be >= 0")
        if not 0.0 < self.p < 1.0:
            raise ValueError("dropout probability must lie strictly inside (0, 1)")
        if self.f < 1:
            raise ValueError("node count must be >= 1")

    @classmethod
    def from_logit(cls, weight_sq_norm, p_logit, f):
        """Build from an unconstrained logit so optimizers never leave (0, 1)."""
        return cls(weight_sq_norm, float(1.0 / (1.0 + np.exp(-p_logit))), f)


@dataclass(frozen=True)
class ConcreteConfig:
    n: int = 50
    iota_sq: float = 1e-6
    zeta: float = 1e-3
    temperature: float = 0.1

    def __post_init__(self):
        if self.n < 1 or self.iota_sq <= 0 or self.zeta < 0 or self.temperature <= 0:
            raise ValueError("invalid Concrete-dropout configuration")


def _gather(emb, labels):
    e = np.asarray(emb.vectors if hasattr(emb, "vectors") else emb, dtype=np.float64)
    labels = np.asarray(labels)
    if e.ndim == 2:  # (H, D) style input with 1-D labels
        e = e[None]
        labels = labels.reshape(1, -1)
    if e.shape[:2] != labels.shape:
        raise ShapeMismatchError(f"embedding grid {e.shape[:2]} != label grid {labels.shape}")
    ids = np.unique(labels)
    ids = ids[ids != 0]
    if ids.size == 0:
        raise EmptyInputError("discriminative loss needs at least one instance")
    flat_e = e.reshape(-1, e.shape[-1])
    flat_l = labels.ravel()
    # inverse index into ids for assigned pixels, -1 for background
    inv = np.full(flat_l.shape, -1)
    assigned = flat_l != 0
    inv[assigned] = np.searchsorted(ids, flat_l[assigned])
    counts = np.bincount(inv[assigned], minlength=ids.size).astype(np.float64)
    sums = np.zeros((ids.size, e.shape[-1]))
    np.add.at(sums, inv[assigned], flat_e[assigned])
    centers = sums / counts[:, None]
    return e, flat_e, inv, assigned, counts, centers


def _pair_terms(centers, cfg):
    diff = centers[:, None, :] - centers[None, :, :]
    sq = np.einsum("abd,abd->ab", diff, diff)
    dist = sq if cfg.hinge_on_squared_norm else np.sqrt(sq)
    hinge = np.maximum(0.0, 2.0 * cfg.delta_d - dist)
    np.fill_diagonal(hinge, 0.0)
    return diff, dist, hinge


def discriminative_loss(emb, labels, cfg=DiscriminativeConfig()):
    """Evaluate the three loss terms on pixels with nonzero instance id."""
    _, flat_e, inv, assigned, counts, centers = _gather(emb, labels)
    n_inst = centers.shape[0]
    resid = flat_e[assigned] - centers[inv[assigned]]
    per_inst = np.bincount(inv[assigned], weights=np.einsum("id,id->i", resid, resid),
                           minlength=n_inst)
    l_var = float(np.mean(per_inst / counts))
    if n_inst > 1:
        _, _, hinge = _pair_terms(centers, cfg)
        l_dist = float(np.sum(hinge ** 2) / (n_inst * (n_inst - 1)))
    else:
        l_dist = 0.0
    l_reg = float(np.mean(np.einsum("cd,cd->c", centers, centers)))
    total = cfg.w_var * l_var + cfg.w_dist * l_dist + cfg.w_reg * l_reg
    return DiscriminativeLoss(total, l_var, l_dist, l_reg, centers)


def discriminative_loss_grad(emb, labels, cfg=DiscriminativeConfig()):
    """Analytic gradient of the total loss w.r.t. every embedding vector.

    Returns an array shaped like the embeddings; unassigned pixels get zero.
    """
    e, flat_e, inv, assigned, counts, centers = _gather(emb, labels)
    n_inst, dim = centers.shape
    idx = inv[assigned]

    grad = np.zeros_like(flat_e)
    # the mean's own dependence cancels in the variance term since residuals sum to 0
    grad[assigned] = cfg.w_var * 2.0 * (flat_e[assigned] - centers[idx]) / (n_inst * counts[idx, None])

    d_mu = cfg.w_reg * 2.0 * centers / n_inst
    if n_inst > 1 and cfg.w_dist:
        diff, dist, hinge = _pair_terms(centers, cfg)
        if cfg.hinge_on_squared_norm:
            ddist = 2.0 * diff
        else:
            with np.errstate(invalid="ignore", divide="ignore"):
                ddist = np.where(dist[..., None] > 0, diff / dist[..., None], 0.0)
        # ordered pairs (A, B) and (B, A) contribute equally, hence the factor 2
        coef = -2.0 * 2.0 * hinge / (n_inst * (n_inst - 1))
        d_mu = d_mu + cfg.w_dist * np.einsum("ab,abd->ad", coef, ddist)
    grad[assigned] += d_mu[idx] / counts[idx, None]
    return grad.reshape(e.shape).reshape(np.shape(getattr(emb, "vectors", emb)))


def semantic_cross_entropy(logits, labels):
    """Mean softmax cross-entropy over (background, foreground, overlap) and its logit gradient."""
    z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if z.shape[:-1] != labels.shape or z.shape[-1] != 3:
        raise ShapeMismatchError(f"logits {z.shape} incompatible with labels {labels.shape}")
    z = z - z.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    onehot = np.eye(3)[labels]
    n = labels.size
    loss = float(-np.sum(onehot * logp) / n)
    grad = (np.exp(logp) - onehot) / n
    return loss, grad


def bernoulli_entropy(p):
    """Entropy in nats of Bernoulli(p), with ``0 ln 0 = 0``. Works elementwise on arrays."""
    p_arr = np.asarray(p, dtype=np.float64)
    if np.any(p_arr < 0) or np.any(p_arr > 1) or np.any(np.isnan(p_arr)):
        raise ValueError("probability outside [0, 1]")
    q = 1.0 - p_arr
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(p_arr > 0, p_arr * np.log(p_arr), 0.0) - np.where(q > 0, q * np.log(q), 0.0)
    return float(h) if np.ndim(h) == 0 else h


def concrete_regularizer(layers, cfg=ConcreteConfig()):
    if not layers:
        raise ValueError("need at least one layer")
    total = 0.0
    for layer in layers:
        weight_term = cfg.iota_sq * (1.0 - layer.p) / 2.0 * layer.weight_sq_norm
        total += weight_term - cfg.zeta * layer.f * bernoulli_entropy(layer.p)
    return total / cfg.n


def concrete_dropout_mask(p, temperature, u):
    """Relaxed Bernoulli sample ``z`` in (0, 1).

    ``z`` is the *drop* indicator: as the temperature goes to zero, ``z -> 1``
    with probability ``p``. Multiply activations by ``1 - z`` to apply it.
    Vectorizes over array-valued ``u``.
    """
    u = np.asarray(u, dtype=np.float64)
    if np.any(u <= 0) or np.any(u >= 1):
        raise ValueError("uniform sample must lie strictly inside (0, 1)")
    if not 0 < p < 1 or temperature <= 0:
        raise ValueError("need p in (0, 1) and temperature > 0")
    logit = (np.log(p) - np.log1p(-p) + np.log(u) - np.log1p(-u)) / temperature
    # stable sigmoid
    z = np.where(logit >= 0, 1.0 / (1.0 + np.exp(-np.abs(logit))),
                 np.exp(-np.abs(logit)) / (1.0 + np.exp(-np.abs(logit))))
    return float(z) if z.ndim == 0 else z
