"""Command-line entry point: ``mrfknn <command> [options]``.

Every command reads an optional JSON config (fields of
:class:`mrfknn.pipeline.ExperimentConfig`) and works inside ``--out``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import neuralnet, pipeline


def _global_flags(parser, suppress: bool) -> None:
    # flags may come before or after the command; subcommand copies must not
    # overwrite values parsed at top level with their defaults
    def d(v):
        return argparse.SUPPRESS if suppress else v
    parser.add_argument("--config", default=d(None), help="JSON experiment config")
    parser.add_argument("--seed", type=int, default=d(None), help="override the config seed")
    parser.add_argument("--deterministic", action="store_true", default=d(False),
                        help="single-threaded deterministic kernels")
    parser.add_argument("--out", default=d("mrf_out"), help="experiment directory")
    parser.add_argument("-v", "--verbose", action="count", default=d(0))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    p = argparse.ArgumentParser(prog="mrfknn",
                                description="Spiral MRF tissue mapping experiments.")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)
    synth = sub.add_parser("synth", parents=[common], help="synthesize phantoms and raw data")
    synth.add_argument("--noiseless", action="store_true", help="skip additive noise")
    sub.add_parser("dict", parents=[common], help="build the stacked and compressed dictionaries")
    base = sub.add_parser("baseline", parents=[common], help="gridding + dictionary matching")
    base.add_argument("--method", choices=("dm", "sdm"), default="dm")
    base.add_argument("--kernel", choices=("average", "bilinear", "gaussian", "kaiser_bessel"))
    train = sub.add_parser("train", parents=[common], help="train the T1 and T2 networks")
    train.add_argument("--targets", nargs="+", choices=("t1", "t2"), default=["t1", "t2"])
    infer = sub.add_parser("infer", parents=[common], help="apply trained networks")
    infer.add_argument("--png", action="store_true", help="also write 16-bit PNG maps")
    sub.add_parser("eval", parents=[common], help="comparison table across methods")
    abl = sub.add_parser("ablate", parents=[common], help="gridding kernel / feature ablation")
    abl.add_argument("--columns", nargs="+", choices=pipeline.ABLATION_COLUMNS,
                     default=pipeline.ABLATION_COLUMNS)
    return p


def load_config(args) -> pipeline.ExperimentConfig:
    """``--config``, else the config saved by an earlier ``synth`` in ``--out``, else defaults."""
    data = {}
    path = args.config
    if path is None and (Path(args.out) / "config.json").exists():
        path = Path(args.out) / "config.json"
    if path:
        data = json.loads(Path(path).read_text())
    if args.seed is not None:
        data["seed"] = args.seed
    if getattr(args, "noiseless", False):
        data["noise_snr_db"] = None
    return pipeline.ExperimentConfig.from_dict(data)


def _print_reports(reports) -> None:
    print(",".join(pipeline.metrics.TABLE_COLUMNS))
    for r in reports:
        print(",".join("" if v is None else f"{v:.6g}" if isinstance(v, float) else str(v)
                       for v in r.row()))


def run(args) -> int:
    cfg = load_config(args)
    if args.deterministic:
        neuralnet.set_deterministic(True)
    out = args.out
    cmd = args.command
    if cmd == "synth":
        written = pipeline.cmd_synth(cfg, out)
        print(f"wrote {len(written)} slices to {out}")
    elif cmd == "dict":
        stacked, comp = pipeline.cmd_dict(cfg, out)
        print(f"dictionary: L={stacked.L}, T'={stacked.entries.shape[1]}, rank={comp.rank}")
    elif cmd == "baseline":
        _print_reports([pipeline.cmd_baseline(cfg, out, args.method, args.kernel)])
    elif cmd == "train":
        res = pipeline.cmd_train(cfg, out, tuple(args.targets))
        print(f"neighbor table build time: {res['table_build_s']:.3f} s")
        for t in args.targets:
            print(f"{t}: final loss {res[t][-1][1]:.5f}" if res[t] else f"{t}: no epochs run")
    elif cmd == "infer":
        for row in pipeline.cmd_infer(cfg, out, png=args.png):
            print(f"slice {row['slice']}: features {row['features_s']:.3f} s, "
                  f"forward {row['forward_s']:.3f} s")
    elif cmd == "eval":
        _print_reports(pipeline.cmd_eval(cfg, out))
    elif cmd == "ablate":
        table = pipeline.cmd_ablate(cfg, out, args.columns)
        print("metric," + ",".join(args.columns))
        for key in ("mae_t1", "mae_t2"):
            print(key + "," + ",".join("" if table[c][key] is None else f"{table[c][key]:.4g}"
                                       for c in args.columns))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (ValueError, FileNotFoundError, pipeline.OutputBusy) as exc:
        print(f"mrfknn {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
