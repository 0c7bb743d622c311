"""Command line entry points: train, eval, ablate, inspect."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .cdb import CdbConfig, Guidance
from .config import ConfigError, load_synth_spec, load_train_config, parse_grid
from .correlation import Metric
from .data import SyntheticSpec, generate_synthetic, load_cifar
from .engine import ablate, evaluate, train
from .inspect_tools import drop_report, dump_correlation, grad_cam, write_pgm
from .network import restore_network


def _add_data_flags(p: argparse.ArgumentParser):
    p.add_argument("--dataset", choices=("c10", "c100", "synth"), default="synth")
    p.add_argument("--data-dir", default=None, help="directory of CIFAR .bin files")
    p.add_argument("--synth-spec", default=None,
                   help="flat key-value file of synth.* keys")


def _load_eval_sets(args):
    if args.dataset == "synth":
        spec = load_synth_spec(args.synth_spec) if args.synth_spec else SyntheticSpec()
        return generate_synthetic(spec)
    if not args.data_dir:
        raise ConfigError(f"dataset {args.dataset} needs --data-dir")
    return load_cifar(args.data_dir, args.dataset)


def _cmd_train(args) -> int:
    cfg = load_train_config(args.config, seed=args.seed)
    if cfg.out_dir is None:
        cfg = replace(cfg, out_dir=f"runs/train-seed{cfg.seed}")
    record = train(cfg)
    if record.epochs:
        last = record.epochs[-1]
        print(f"epoch {last.epoch}: train_acc={last.train_acc:.4f} "
              f"test_acc={last.test_acc:.4f}")
    print(f"checkpoint: {record.checkpoint_path}")
    return 0


def _cmd_eval(args) -> int:
    _, test = _load_eval_sets(args)
    acc = evaluate(args.checkpoint, test)
    print(f"test_acc={acc:.4f} over {len(test)} images")
    return 0


def _cmd_ablate(args) -> int:
    with open(args.grid, encoding="utf-8") as fh:
        grid = parse_grid(fh.read())
    _, table = ablate(grid, out_dir=args.out)
    print(table, end="")
    return 0


def _default_layer(net) -> str:
    return net.spec.tap_names[-1]


def _cmd_inspect(args) -> int:
    net = restore_network(args.checkpoint)
    _, test = _load_eval_sets(args)
    if not 0 <= args.image_index < len(test):
        raise ConfigError(
            f"--image-index {args.image_index} out of range for {len(test)} test images")
    image = test.images[args.image_index]
    layer = args.layer or _default_layer(net)
    if args.mode == "cam":
        class_index = args.class_index
        if class_index is None:
            class_index = int(test.labels[args.image_index])
        heatmap = grad_cam(net, image, class_index, layer)
        if not args.out:
            raise ConfigError("inspect cam needs --out for the PGM file")
        write_pgm(args.out, heatmap)
        print(f"wrote {args.out} and {args.out}.txt "
              f"(layer {layer}, class {class_index})")
        return 0
    if args.mode == "corr":
        text = dump_correlation(net, image, layer, Metric(args.metric))
    else:  # drops
        cfg = CdbConfig(metric=Metric(args.metric), gamma=args.gamma,
                        guidance=Guidance(args.guidance))
        text = drop_report(net, image[None], cfg, args.trials, layer)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cdb-lab",
        description="Correlation-guided channel dropping: training and inspection",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training job from a config file")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None,
                         help="override the config's seed")
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="test-set accuracy of a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    _add_data_flags(p_eval)
    p_eval.set_defaults(func=_cmd_eval)

    p_ablate = sub.add_parser("ablate", help="run a grid of training jobs")
    p_ablate.add_argument("--grid", required=True)
    p_ablate.add_argument("--out", default=None, help="directory for run outputs")
    p_ablate.set_defaults(func=_cmd_ablate)

    p_inspect = sub.add_parser("inspect", help="post-hoc model inspection")
    p_inspect.add_argument("mode", choices=("cam", "corr", "drops"))
    p_inspect.add_argument("--checkpoint", required=True)
    p_inspect.add_argument("--image-index", type=int, default=0)
    p_inspect.add_argument("--layer", default=None,
                           help="tap name v1..v5; defaults to the last block")
    p_inspect.add_argument("--metric", choices=("ma", "bp"), default="ma")
    p_inspect.add_argument("--trials", type=int, default=1000)
    p_inspect.add_argument("--out", default=None)
    p_inspect.add_argument("--class-index", type=int, default=None,
                           help="cam target class; defaults to the image label")
    p_inspect.add_argument("--gamma", type=float, default=None,
                           help="drops: override the metric's default rate")
    p_inspect.add_argument("--guidance", choices=("random", "attention"),
                           default="random", help="drops: anchor selection")
    _add_data_flags(p_inspect)
    p_inspect.set_defaults(func=_cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
