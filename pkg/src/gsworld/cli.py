"""Command-line interface.

Subcommands: gen (synthetic demos), train, eval, render (scene file to
image), predict (world-model future views for a demo step). Exit codes:
0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import difflib
import sys
from pathlib import Path

import numpy as np

METRICS_HELP = "metrics.csv columns: step,loss_bc,loss_recon,loss_task,loss_pred,loss_total"


class _Parser(argparse.ArgumentParser):
    """argparse with exit code 1 on usage errors and flag suggestions."""

    def error(self, message):
        if "unrecognized arguments" in message:
            unknown = message.split(":", 1)[1].strip().split()
            options = [opt for action in self._actions for opt in action.option_strings]
            hints = []
            for arg in unknown:
                if arg.startswith("-"):
                    close = difflib.get_close_matches(arg, options, n=1)
                    if close:
                        hints.append(f"did you mean {close[0]!r}?")
            if hints:
                message = f"{message} ({' '.join(hints)})"
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> _Parser:
    parser = _Parser(prog="gsworld",
                     description="Desk-scale hierarchical Gaussian world model "
                                 "for bimanual manipulation.",
                     epilog=METRICS_HELP)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p_gen = sub.add_parser("gen", help="generate scripted synthetic demonstrations")
    p_gen.add_argument("--task", required=True,
                       help="push-box | lift-tray-two-handed | handover-item")
    p_gen.add_argument("--n", type=int, required=True, help="number of episodes")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True, help="output dataset directory")
    p_gen.add_argument("--image-size", type=int, default=64)
    p_gen.add_argument("--cameras", type=int, default=3)

    p_train = sub.add_parser("train", help="train the world model on a dataset",
                             epilog=METRICS_HELP)
    p_train.add_argument("--dataset", help="dataset directory")
    p_train.add_argument("--out", help="run output directory")
    p_train.add_argument("--config", help="flat key=value config file")
    p_train.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                         help="config override, e.g. --set steps=500")
    p_train.add_argument("--resume", help="checkpoint to resume from")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--demos", help="comma-separated demo indices (default: all)")
    p_eval.add_argument("--out", help="write the report to this key=value file")

    p_render = sub.add_parser("render", help="rasterize a binary scene file")
    p_render.add_argument("--scene", required=True, help="scene .bgs file")
    p_render.add_argument("--camera", type=int, required=True, help="ring camera index")
    p_render.add_argument("--out", required=True, help="output PPM path")
    p_render.add_argument("--labels", help="also write argmax instance labels (PGM)")
    p_render.add_argument("--image-size", type=int, default=64)
    p_render.add_argument("--cameras", type=int, default=3)

    p_pred = sub.add_parser("predict", help="render current/future views for a demo step")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--demo", required=True, help="demo directory (…/demos/<id>)")
    p_pred.add_argument("--step", type=int, required=True)
    p_pred.add_argument("--out", required=True, help="output directory")
    return parser


def _cmd_gen(args) -> int:
    from .synth_env import generate_demos, get_script
    script = get_script(args.task)
    lengths = generate_demos(script, args.n, args.out, seed=args.seed,
                             image_size=args.image_size, n_cameras=args.cameras)
    print(f"wrote {len(lengths)} episodes to {args.out} "
          f"(mean length {np.mean(lengths):.2f})")
    return 0


def _cmd_train(args) -> int:
    from .trainer import config_from_file, config_from_items, train
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.dataset:
        overrides["dataset"] = args.dataset
    if args.out:
        overrides["out_dir"] = args.out
    if args.config:
        config = config_from_file(args.config, **overrides)
    else:
        config = config_from_items(overrides)
    if not config.dataset or not config.out_dir:
        raise ValueError("train needs --dataset and --out (or config entries)")
    out = train(config, resume_from=args.resume)
    print(f"run complete: {out}")
    return 0


def _cmd_eval(args) -> int:
    from .trainer import evaluate
    demos = None
    if args.demos:
        demos = [int(x) for x in args.demos.split(",") if x.strip() != ""]
    report = evaluate(args.checkpoint, args.dataset, demo_indices=demos)
    for key, value in report.to_kv().items():
        print(f"{key} = {value}")
    if args.out:
        report.save(args.out)
    return 0


def _cmd_render(args) -> int:
    from .core.io import read_scene, write_pgm, write_ppm
    from .core.observations import IGNORE_LABEL
    from .rasterizer import render
    from .synth_env import default_cameras
    cams = default_cameras(args.image_size, args.cameras)
    if not 0 <= args.camera < len(cams):
        raise ValueError(f"camera index {args.camera} out of range [0, {len(cams)})")
    gset = read_scene(args.scene)
    out = render(gset, cams[args.camera])
    write_ppm(args.out, out.rgb)
    if args.labels:
        covered = (1.0 - out.transmittance) > 0.5
        labels = np.where(covered, np.argmax(out.logit_map, axis=2), IGNORE_LABEL)
        write_pgm(args.labels, labels.astype(np.uint8))
    print(f"rendered {args.scene} -> {args.out}")
    return 0


def _cmd_predict(args) -> int:
    from .core.io import read_dataset_meta, read_demo, write_pgm, write_ppm
    from .core.observations import IGNORE_LABEL
    from .models import ModelParams
    from .world_model import predict_step
    demo_dir = Path(args.demo)
    root = demo_dir.parent.parent
    meta = read_dataset_meta(root)
    demo = read_demo(demo_dir, meta)
    if not 0 <= args.step < len(demo.steps):
        raise ValueError(f"step {args.step} out of range [0, {len(demo.steps)})")
    params, _, _ = ModelParams.load(args.checkpoint)
    step = demo.steps[args.step]
    bundle = predict_step(step.observation, step.action, meta["cameras"], params)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for v in range(len(meta["cameras"])):
        for tag, handle in (("current", bundle.current[v]), ("future", bundle.future[v])):
            write_ppm(out_dir / f"{tag}_view{v}.rgb.ppm", handle.output.rgb)
            covered = (1.0 - handle.output.transmittance) > 0.5
            labels = np.where(covered, np.argmax(handle.output.logit_map, axis=2),
                              IGNORE_LABEL)
            write_pgm(out_dir / f"{tag}_view{v}.labels.pgm", labels.astype(np.uint8))
    print(f"wrote predictions for step {args.step} to {out_dir}")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "render": _cmd_render,
    "predict": _cmd_predict,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help()
        return 1
    try:
        return _COMMANDS[args.command](args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # runtime failures exit 2 with a clean message
        print(f"gsworld {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
