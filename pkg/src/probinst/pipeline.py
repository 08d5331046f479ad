"""Batch stages over a dataset directory.

Layout (one folder per sample)::

    <data>/config.json
    <data>/sample_000/gt.npy            uint8 (K, H, W) instance stack
    <data>/sample_000/sem_gt.npy        float32 (H, W, 3)
    <data>/sample_000/draw_00.npy       uint8 (K_t, H, W) simulated draw
    <data>/sample_000/embed_00.npy      float32 (H, W, D)
    <data>/sample_000/sem_00.npy        float32 (H, W, 3)
    <data>/sample_000/provenance.json   injected error events
    <data>/sample_000/seg_00.npy        uint8 stack from ``segment``
    <data>/sample_000/counts.npy        int32 (K, H, W) draw counts
    <data>/sample_000/prob.npy          float32 (K, H, W) = counts / T
    <data>/sample_000/entropy.npy       float32 (H, W) combined entropy
    <data>/sample_000/pred.npy          uint8 binarized stack
    <data>/sample_000/scores.npy        float64 per-instance confidence

External models can drop ``embed_XX.npy``/``sem_XX.npy`` or ``seg_XX.npy``
files into this layout and run the later stages unchanged.
"""

import json
import logging
import os
import tempfile
from pathlib import Path

import numpy as np

from . import npyio
from .agglomeration import agglomerate_draws, binarize_scored
from .clustering import segment
from .config import PipelineConfig
from .core import EmbeddingMap, InstanceMasks, ProbabilisticInstanceMap, SemanticMap, UncertaintyMap
from .errors import MissingInputError, ShapeMismatchError
from .evaluation import ScoredPrediction, aggregate, evaluate, format_table
from .proofreading import rows_to_csv, rows_to_json, simulate
from .synthetic import (STREAM_DRAWS, STREAM_EMBED, STREAM_SCENE, generate_scene, make_rng,
                        simulate_draws, simulate_embeddings)
from .uncertainty import curve_from_stats, entropy_map, patch_statistics, pool_stats

log = logging.getLogger(__name__)


def write_text(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def save_masks(path, masks):
    npyio.write_array(path, masks.masks.astype(np.uint8))


def load_masks(path, shape=None):
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"missing input {path}", path=str(path))
    arr = npyio.read_array(path)
    if arr.ndim != 3:
        raise ShapeMismatchError(f"{path} must hold a (K, H, W) stack, got shape {arr.shape}")
    if arr.shape[0] == 0 and shape is not None:
        return InstanceMasks.empty(shape)
    return InstanceMasks(arr != 0)


def _read(path):
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"missing input {path}", path=str(path))
    return npyio.read_array(path)


def sample_dirs(data_dir):
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise MissingInputError(f"dataset directory {data_dir} does not exist", path=str(data_dir))
    return sorted(p for p in data_dir.iterdir() if p.is_dir() and p.name.startswith("sample_"))


def load_config(data_dir, cfg=None):
    """An explicit config wins, then the dataset's config.json, then defaults."""
    if cfg is not None:
        return cfg
    path = Path(data_dir) / "config.json"
    if path.exists():
        return PipelineConfig.from_json(path.read_text())
    return PipelineConfig()


def synth(cfg, data_dir):
    """Generate ground truth, draws, embeddings and semantic maps for every sample."""
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    write_text(data_dir / "config.json", cfg.to_json())
    for s in range(cfg.n_samples):
        sd = data_dir / f"sample_{s:03d}"
        sd.mkdir(exist_ok=True)
        gt, sem_gt = generate_scene(cfg.scene, rng=make_rng(cfg.seed, s, STREAM_SCENE))
        save_masks(sd / "gt.npy", gt)
        npyio.write_array(sd / "sem_gt.npy", sem_gt.probs.astype(np.float32))
        draws = simulate_draws(gt, cfg.noise, cfg.n_draws, rng=make_rng(cfg.seed, s, STREAM_DRAWS))
        for t, draw in enumerate(draws):
            save_masks(sd / f"draw_{t:02d}.npy", draw)
            emb = simulate_embeddings(draw, cfg.noise, cfg.embedding_dim,
                                      rng=make_rng(cfg.seed, s, STREAM_EMBED, t))
            npyio.write_array(sd / f"embed_{t:02d}.npy", emb.vectors.astype(np.float32))
            npyio.write_array(sd / f"sem_{t:02d}.npy",
                              SemanticMap.from_masks(draw).probs.astype(np.float32))
        prov = {"events": draws.events, "error_instances": draws.error_instances()}
        write_text(sd / "provenance.json", json.dumps(prov, indent=1, sort_keys=True))
    log.info("wrote %d samples to %s", cfg.n_samples, data_dir)


def _draw_indices(sd, prefix):
    return sorted(int(p.stem.split("_")[1]) for p in sd.glob(f"{prefix}_*.npy"))


def segment_stage(data_dir, cfg=None):
    cfg = load_config(data_dir, cfg)
    for sd in sample_dirs(data_dir):
        for t in _draw_indices(sd, "embed"):
            emb = EmbeddingMap(_read(sd / f"embed_{t:02d}.npy"))
            sem = SemanticMap(_read(sd / f"sem_{t:02d}.npy").astype(np.float64))
            if emb.shape != sem.shape:
                raise ShapeMismatchError(f"{sd.name} draw {t}: embedding and semantic grids differ")
            masks = segment(emb, sem, cfg.mean_shift, cfg.overlap_threshold)
            save_masks(sd / f"seg_{t:02d}.npy", masks)


def agglomerate_stage(data_dir, cfg=None, source="seg"):
    cfg = load_config(data_dir, cfg)
    for sd in sample_dirs(data_dir):
        shape = _read(sd / "sem_gt.npy").shape[:2] if (sd / "sem_gt.npy").exists() else None
        idx = _draw_indices(sd, source)
        if not idx:
            raise MissingInputError(f"no {source}_XX.npy draws in {sd}", path=str(sd))
        draws = [load_masks(sd / f"{source}_{t:02d}.npy", shape) for t in idx]
        prob = agglomerate_draws(draws)
        _, combined = entropy_map(prob, cfg.entropy_reduce)
        masks, scores = binarize_scored(prob, cfg.binarize_theta)
        npyio.write_array(sd / "counts.npy", prob.counts.astype(np.int32))
        npyio.write_array(sd / "prob.npy", prob.probs.astype(np.float32))
        npyio.write_array(sd / "entropy.npy", combined.entropy.astype(np.float32))
        save_masks(sd / "pred.npy", masks)
        npyio.write_array(sd / "scores.npy", scores.astype(np.float64))
        write_text(sd / "agglomeration.json", json.dumps({"n_draws": prob.n_draws, "source": source}))


def _load_eval_sample(sd, pred_name, gt_name):
    gt = load_masks(sd / gt_name)
    pred = load_masks(sd / pred_name, gt.shape)
    scores_path = sd / "scores.npy"
    scores = None
    if pred_name == "pred.npy" and scores_path.exists():
        scores = npyio.read_array(scores_path)
        if scores.shape != (len(pred),):
            scores = None
    return ScoredPrediction(pred, scores), gt


def _load_entropy(sd, shape):
    path = sd / "entropy.npy"
    if not path.exists():
        return UncertaintyMap(np.zeros(shape))
    return UncertaintyMap(npyio.read_array(path).astype(np.float64))


def metrics_stage(data_dir, cfg=None, out_name="curves.csv"):
    cfg = load_config(data_dir, cfg)
    stats = []
    for sd in sample_dirs(data_dir):
        pred, gt = _load_eval_sample(sd, "pred.npy", "gt.npy")
        stats.append(patch_statistics(pred.masks, gt, _load_entropy(sd, gt.shape), cfg.patch_size))
    curve = curve_from_stats(pool_stats(stats), cfg.acc_threshold, cfg.unc_thresholds)
    lines = ["threshold,p_acc_given_cert,p_unc_given_inacc,pavpu"]
    fmt = lambda v: "" if np.isnan(v) else f"{v:.6f}"
    for t, a, u, p in curve.rows():
        lines.append(f"{t:.4f},{fmt(a)},{fmt(u)},{fmt(p)}")
    write_text(Path(data_dir) / out_name, "\n".join(lines) + "\n")
    return curve


def evaluate_stage(data_dir, pred_name="pred.npy", gt_name="gt.npy", out_name="report"):
    reports = [evaluate(*_load_eval_sample(sd, pred_name, gt_name)) for sd in sample_dirs(data_dir)]
    rep = aggregate(reports)
    write_text(Path(data_dir) / f"{out_name}.json", rep.to_json() + "\n")
    write_text(Path(data_dir) / f"{out_name}.txt", format_table([(pred_name, rep)]) + "\n")
    return rep


def proofread_stage(data_dir, cfg=None, sequential=True, local_max=True, out_name="proofread"):
    cfg = load_config(data_dir, cfg)
    dataset = []
    for sd in sample_dirs(data_dir):
        pred, gt = _load_eval_sample(sd, "pred.npy", "gt.npy")
        dataset.append((pred, gt, _load_entropy(sd, gt.shape)))
    rows = simulate(dataset, cfg.ks, cfg.patch_size, local_max=local_max, sequential=sequential)
    write_text(Path(data_dir) / f"{out_name}.csv", rows_to_csv(rows))
    write_text(Path(data_dir) / f"{out_name}.json", rows_to_json(rows) + "\n")
    return rows


def load_prob_map(sd):
    meta = json.loads((Path(sd) / "agglomeration.json").read_text())
    return ProbabilisticInstanceMap(_read(Path(sd) / "counts.npy"), meta["n_draws"])
