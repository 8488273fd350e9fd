"""Command-line surface.

Subcommands: synth-data, search, retrain, eval, decode, complexity, report.
Every subcommand accepts --seed, --config, and --out. The config file schema
is printed in each subcommand's --help epilog.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .arch import decode_genotype
from .config import (Config, config_digest, dumps_config, load_config,
                     network_config, schema_text, validate_config)
from .complexity import count_params_flops
from .data import (DEFECT_KINDS, SynthSpec, generate_synthetic_dataset,
                   load_dataset)
from .exceptions import ConfigError, DefectNasError
from .fileio import atomic_write_text, write_gray_png
from .genotype import read_genotype, write_genotype
from .metrics import segmentation_metrics
from .report import render_report
from .search import load_search_checkpoint, restore_arch, run_search
from .supernet import build_discrete_network, build_supernet
from .train import (evaluate_network, load_retrain_checkpoint, retrain,
                    save_retrain_checkpoint)


def _load_cfg(args):
    cfg = load_config(args.config) if args.config else validate_config(Config())
    return cfg


def _image_size(cfg):
    return (cfg.image_size, cfg.image_size)


def cmd_synth_data(args):
    spec = SynthSpec(
        size=(args.size, args.size),
        n_train=args.n_train,
        n_test=args.n_test,
        kinds=tuple(args.kinds.split(",")),
        contrast=(args.contrast_lo, args.contrast_hi),
        texture_scale=args.texture_scale,
        noise=args.noise,
        seed=args.seed,
    )
    root = generate_synthetic_dataset(spec, args.out)
    print(f"wrote {spec.n_train} train / {spec.n_test} test samples under {root}")
    return 0


def cmd_search(args):
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = load_dataset(args.data, "train", size=_image_size(cfg),
                           channels=cfg.in_channels)
    genotype = run_search(
        cfg, samples, args.seed,
        log_path=out / "search_log.jsonl",
        checkpoint_path=out / "search_ckpt.pt",
        resume=args.resume,
    )
    path = out / "searched.genotype"
    write_genotype(genotype, path)
    print(f"decoded genotype written to {path}")
    return 0


def cmd_retrain(args):
    cfg = _load_cfg(args)
    genotype = read_genotype(args.genotype)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = load_dataset(args.data, "train", size=_image_size(cfg),
                           channels=cfg.in_channels)
    net, final_loss = retrain(
        cfg, genotype, samples, args.seed, epochs=args.epochs,
        log_path=out / "retrain_log.jsonl",
        checkpoint_path=out / "model.pt",
    )
    print(f"retrained for {args.epochs or cfg.retrain_epochs} epochs, "
          f"final mean loss {final_loss:.4f}; model at {out / 'model.pt'}")
    return 0


def cmd_eval(args):
    cfg = _load_cfg(args)
    samples = load_dataset(args.data, args.split, size=_image_size(cfg),
                           channels=cfg.in_channels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.checkpoint:
        net, net_cfg, _ = load_retrain_checkpoint(args.checkpoint)
        record, preds = evaluate_network(net, samples,
                                         threshold=net_cfg.threshold)
        if args.save_predictions:
            pred_dir = out / "predictions"
            for sample, pred in zip(samples, preds):
                write_gray_png(pred_dir / f"{sample.id}.png", pred)
    elif args.predictions:
        import numpy as np

        pred_samples = load_dataset(args.predictions, None,
                                    size=_image_size(cfg), channels=1)
        by_id = {s.id: s for s in pred_samples}
        missing = [s.id for s in samples if s.id not in by_id]
        if missing:
            raise ConfigError(f"predictions missing for: {missing[:5]}")
        preds = np.stack([by_id[s.id].image for s in samples])
        masks = np.stack([s.mask for s in samples])
        record = segmentation_metrics(preds, masks, cfg.threshold)
    else:
        raise ConfigError("eval needs --checkpoint or --predictions")
    path = out / "metrics.json"
    atomic_write_text(path, json.dumps(record.to_dict(), indent=2) + "\n")
    print(f"iou={record.iou:.4f} f1={record.f1:.4f} pa={record.pa:.4f} "
          f"params={record.params} flops={record.flops}")
    print(f"metrics written to {path}")
    return 0


def cmd_decode(args):
    payload = load_search_checkpoint(args.checkpoint)
    cfg, arch = restore_arch(payload)
    genotype = decode_genotype(arch, config_digest=payload["config_digest"],
                               seed=payload["seed"])
    write_genotype(genotype, args.out)
    print(f"decoded genotype written to {args.out}")
    return 0


def cmd_complexity(args):
    cfg = _load_cfg(args)
    h, w = _image_size(cfg)
    if args.genotype:
        genotype = read_genotype(args.genotype)
        net = build_discrete_network(genotype,
                                     network_config(cfg, role="discrete"),
                                     args.seed)
        params, flops = count_params_flops(net, (cfg.in_channels, h, w))
        label = "decoded network"
    elif args.supernet:
        from .arch import ArchWeights

        net = build_supernet(network_config(cfg, role="search"), args.seed)
        arch = ArchWeights(n_intermediate=cfg.n_intermediate,
                           schedule=cfg.schedule, seed=args.seed)
        params, flops = count_params_flops(
            net, (cfg.in_channels, h, w), forward=lambda t: net(t, arch))
        label = "supernet"
    else:
        raise ConfigError("complexity needs --genotype or --supernet")
    print(f"{label}: params={params} flops={flops}")
    if args.out:
        atomic_write_text(args.out, json.dumps(
            {"target": label, "params": params, "flops": flops}, indent=2) + "\n")
    return 0


def cmd_report(args):
    summary = render_report(args.log, args.out, metrics_path=args.metrics)
    print(f"report with {summary['records']} records written to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="defectnas",
        description="Search, retrain, and evaluate compact defect segmentation "
                    "networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True, out_default=None):
        p.add_argument("--seed", type=int, default=0, help="master RNG seed")
        p.add_argument("--config", default=None, help="path to a config file")
        p.add_argument("--out", required=out_required, default=out_default,
                       help="output path")
        p.formatter_class = argparse.RawDescriptionHelpFormatter
        p.epilog = schema_text()

    p = sub.add_parser("synth-data", help="generate a synthetic defect dataset")
    common(p)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=50)
    p.add_argument("--kinds", default="blob,scratch",
                   help=f"comma list from {{{','.join(DEFECT_KINDS)}}}")
    p.add_argument("--contrast-lo", type=float, default=0.1)
    p.add_argument("--contrast-hi", type=float, default=0.3)
    p.add_argument("--texture-scale", type=float, default=6.0)
    p.add_argument("--noise", type=float, default=0.02)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("search", help="run the staged architecture search")
    common(p)
    p.add_argument("--data", required=True, help="dataset root with a train/ split")
    p.add_argument("--resume", action="store_true",
                   help="resume from the checkpoint in --out")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("retrain", help="retrain the decoded network")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--genotype", required=True, help="path to a .genotype file")
    p.add_argument("--epochs", type=int, default=None,
                   help="override retrain_epochs from the config")
    p.set_defaults(func=cmd_retrain)

    p = sub.add_parser("eval", help="evaluate a model or prediction folder")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--checkpoint", default=None, help="retrain checkpoint")
    p.add_argument("--predictions", default=None,
                   help="folder of prediction images to score instead")
    p.add_argument("--save-predictions", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decode", help="decode a genotype from a search checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("complexity", help="count parameters and FLOPs")
    common(p, out_required=False)
    p.add_argument("--genotype", default=None)
    p.add_argument("--supernet", action="store_true")
    p.set_defaults(func=cmd_complexity)

    p = sub.add_parser("report", help="render curves and a summary from a log")
    common(p)
    p.add_argument("--log", required=True, help="search or retrain JSONL log")
    p.add_argument("--metrics", default=None, help="metrics.json to include")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DefectNasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
