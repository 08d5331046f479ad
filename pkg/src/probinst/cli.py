"""Command-line driver: ``probinst <subcommand> [flags]``.

Failures exit with status 2 and print ``{"error": CODE, "message": ...}``
on stderr.
"""

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .config import ENV_DATA_DIR, PipelineConfig
from .errors import ConfigError, ProbinstError
from .losses import DiscriminativeConfig, discriminative_loss, discriminative_loss_grad
from .synthetic import make_rng


def _config(args):
    if getattr(args, "config", None):
        try:
            return PipelineConfig.from_json(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    return None


def _data_dir(args, cfg=None):
    if args.data:
        return Path(args.data)
    return Path((cfg or PipelineConfig()).resolved_data_dir())


def cmd_synth(args):
    cfg = _config(args) or PipelineConfig()
    scene = dataclasses.replace(
        cfg.scene,
        **{k: v for k, v in (("height", args.height), ("width", args.width),
                             ("n_instances", args.n_instances)) if v is not None})
    noise = dataclasses.replace(
        cfg.noise,
        **{k: v for k, v in (("split_rate", args.split_rate), ("merge_rate", args.merge_rate),
                             ("dropout_rate", args.dropout_rate), ("boundary_jitter", args.jitter),
                             ("embedding_sigma", args.sigma)) if v is not None})
    top = {k: v for k, v in (("seed", args.seed), ("n_samples", args.n_samples),
                             ("n_draws", args.n_draws), ("embedding_dim", args.dim)) if v is not None}
    cfg = dataclasses.replace(cfg, scene=scene, noise=noise, **top)
    pipeline.synth(cfg, _data_dir(args, cfg))


def cmd_segment(args):
    pipeline.segment_stage(_data_dir(args), _config(args))


def cmd_agglomerate(args):
    pipeline.agglomerate_stage(_data_dir(args), _config(args), source=args.source)


def cmd_metrics(args):
    curve = pipeline.metrics_stage(_data_dir(args), _config(args))
    print(f"{'threshold':>9} {'p(acc|cert)':>12} {'p(unc|inacc)':>13} {'PAvPU':>7}")
    for t, a, u, p in curve.rows():
        print(f"{t:9.3f} {a:12.3f} {u:13.3f} {p:7.3f}")


def cmd_evaluate(args):
    rep = pipeline.evaluate_stage(_data_dir(args), args.pred_name, args.gt_name, args.out_name)
    from .evaluation import format_table
    print(format_table([(args.pred_name, rep)]))


def cmd_proofread(args):
    rows = pipeline.proofread_stage(_data_dir(args), _config(args), sequential=not args.static,
                                    local_max=not args.no_local_max)
    from .proofreading import rows_to_csv
    print(rows_to_csv(rows), end="")


def gradient_check(n_cases=100, seed=0, step=1e-4):
    """Largest normwise relative error between analytic and central-difference gradients."""
    rng = make_rng(seed)
    worst = 0.0
    for case in range(n_cases):
        h, w = rng.integers(2, 9, size=2)
        dim = int(rng.integers(1, 5))
        n_inst = int(rng.integers(1, 5))
        labels = rng.integers(0, n_inst + 1, size=(h, w))
        emb = rng.normal(0.0, 2.0, size=(h, w, dim))
        cfg = DiscriminativeConfig(hinge_on_squared_norm=bool(case % 2))
        if not np.any(labels):
            labels[0, 0] = 1
        g = discriminative_loss_grad(emb, labels, cfg)
        fd = np.zeros_like(emb)
        for idx in np.ndindex(emb.shape):
            e1, e2 = emb.copy(), emb.copy()
            e1[idx] += step
            e2[idx] -= step
            fd[idx] = (discriminative_loss(e1, labels, cfg).total
                       - discriminative_loss(e2, labels, cfg).total) / (2 * step)
        scale = max(np.abs(fd).max(), np.abs(g).max(), 1e-12)
        worst = max(worst, float(np.abs(g - fd).max() / scale))
    return worst


def cmd_losses_check(args):
    worst = gradient_check(args.n_cases, args.seed)
    ok = worst < args.tol
    print(json.dumps({"max_relative_error": worst, "tolerance": args.tol, "pass": ok}))
    return 0 if ok else 1


def cmd_render(args):
    from .render import render_sample

    data = _data_dir(args)
    out = Path(args.out) if args.out else data / "render"
    out.mkdir(parents=True, exist_ok=True)
    for sd in pipeline.sample_dirs(data):
        gt = pipeline.load_masks(sd / "gt.npy")
        pred = pipeline.load_masks(sd / "pred.npy", gt.shape) if (sd / "pred.npy").exists() else gt
        prob = pipeline.load_prob_map(sd) if (sd / "counts.npy").exists() else None
        ent = pipeline._load_entropy(sd, gt.shape) if (sd / "entropy.npy").exists() else None
        render_sample(out / f"{sd.name}.png", gt, pred, prob, ent)


def cmd_run(args):
    """synth -> segment -> agglomerate -> metrics -> evaluate -> proofread-sim."""
    cmd_synth(args)
    data = _data_dir(args)
    pipeline.segment_stage(data)
    pipeline.agglomerate_stage(data)
    pipeline.metrics_stage(data)
    rep = pipeline.evaluate_stage(data)
    rows = pipeline.proofread_stage(data)
    from .evaluation import format_table
    print(format_table([("agglomerated", rep)]))
    print(f"proofreading rows: {len(rows)}")


def cmd_config(args):
    print((_config(args) or PipelineConfig()).to_json())


def build_parser():
    p = argparse.ArgumentParser(prog="probinst", description=__doc__.splitlines()[0])
    p.add_argument("--data", help=f"dataset directory (default: ${ENV_DATA_DIR} or ./data)")
    p.add_argument("--config", help="PipelineConfig JSON file")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def synth_flags(sp):
        sp.add_argument("--seed", type=int)
        sp.add_argument("--n-samples", type=int)
        sp.add_argument("--n-draws", type=int)
        sp.add_argument("--dim", type=int, help="embedding dimension")
        sp.add_argument("--height", type=int)
        sp.add_argument("--width", type=int)
        sp.add_argument("--n-instances", type=int)
        sp.add_argument("--split-rate", type=float)
        sp.add_argument("--merge-rate", type=float)
        sp.add_argument("--dropout-rate", type=float)
        sp.add_argument("--jitter", type=int)
        sp.add_argument("--sigma", type=float, help="embedding noise per axis")

    sp = sub.add_parser("synth", help="generate synthetic scenes, draws and embeddings")
    synth_flags(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("segment", help="embeddings -> instance masks for every draw")
    sp.set_defaults(func=cmd_segment)

    sp = sub.add_parser("agglomerate", help="draws -> probability, entropy and binarized maps")
    sp.add_argument("--source", choices=["seg", "draw"], default="seg",
                    help="segmented draws (seg_XX) or raw simulated draws (draw_XX)")
    sp.set_defaults(func=cmd_agglomerate)

    sp = sub.add_parser("metrics", help="PAvPU and conditional-probability curves")
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("evaluate", help="AP / AP_dsb / recall report")
    sp.add_argument("--pred-name", default="pred.npy")
    sp.add_argument("--gt-name", default="gt.npy")
    sp.add_argument("--out-name", default="report")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("proofread-sim", help="uncertainty-guided proofreading simulation")
    sp.add_argument("--static", action="store_true", help="rank peaks once instead of sequentially")
    sp.add_argument("--no-local-max", action="store_true", help="plain top-k patches")
    sp.set_defaults(func=cmd_proofread)

    sp = sub.add_parser("losses-check", help="finite-difference self-test of the loss gradient")
    sp.add_argument("--n-cases", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=1e-5)
    sp.set_defaults(func=cmd_losses_check)

    sp = sub.add_parser("render", help="PNG previews")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("run", help="full pipeline on a fresh synthetic dataset")
    synth_flags(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("config", help="print the effective configuration")
    sp.set_defaults(func=cmd_config)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = args.func(args)
    except ProbinstError as exc:
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return 2
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
