"""Command-line entry point: infer, train, bench, gradcheck, eval.

Exit codes
    0   success
    1   gradcheck failure (the failing block is named) or a kernel mismatch in bench
    2   missing checkpoint
    3   unreadable image
    4   image size not divisible by 2^depth
    5   unpaired or empty corpus
    64  invalid configuration

Tables go to stdout, diagnostics to stderr. ``COLORMAMBA_THREADS`` caps the
worker count of the compiled kernels.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError, TrainingDiverged

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_NO_CHECKPOINT = 2
EXIT_BAD_IMAGE = 3
EXIT_BAD_SHAPE = 4
EXIT_BAD_CORPUS = 5
EXIT_CONFIG = 64


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _run_config(args):
    from .config import RunConfig, load_config

    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.preset:
        cfg = cfg.with_preset(args.preset)
    return cfg


def _pair_dirs(a_dir, b_dir, what):
    from .imageio import list_images

    a, b = list_images(a_dir), list_images(b_dir)
    orphans = sorted(set(a) ^ set(b))
    if orphans:
        where = {k: (a.get(k) or b.get(k)) for k in orphans}
        listing = "\n".join(f"  {where[k]}" for k in orphans)
        raise CliError(EXIT_BAD_CORPUS, f"unpaired {what} files:\n{listing}")
    if not a:
        raise CliError(EXIT_BAD_CORPUS, f"empty {what}: no .pgm/.png files in {a_dir} and {b_dir}")
    return [(k, a[k], b[k]) for k in sorted(a)]


def _read(reader, path):
    from .imageio import ImageReadError

    try:
        return reader(path)
    except ImageReadError as exc:
        raise CliError(EXIT_BAD_IMAGE, str(exc)) from None


# -- verbs --------------------------------------------------------------------


def cmd_infer(args) -> int:
    from .checkpoint import load_model
    from .imageio import read_gray, write_rgb
    from .networks import check_input_size

    cfg = _run_config(args)
    ck = args.checkpoint or cfg.paths.get("checkpoint")
    if not ck or not Path(ck).is_file():
        raise CliError(EXIT_NO_CHECKPOINT, f"checkpoint not found: {ck}")
    nir = _read(read_gray, args.input)
    model, _ = load_model(ck)
    try:
        check_input_size(nir.shape[0], nir.shape[1], model.cfg.depth)
    except DimensionError as exc:
        raise CliError(EXIT_BAD_SHAPE, f"{args.input}: {exc}") from None
    with T.no_grad():
        y, _ = model.generate(T.Tensor(nir[None]))
    write_rgb(args.output, y.data[0])
    print(f"wrote {args.output}")
    return EXIT_OK


def load_corpus(nir_dir, rgb_dir):
    from .imageio import read_gray, read_rgb
    from .training import PairedData

    pairs = _pair_dirs(nir_dir, rgb_dir, "NIR/RGB")
    names, nirs, rgbs = [], [], []
    for name, pn, pr in pairs:
        n, r = _read(read_gray, pn), _read(read_rgb, pr)
        if n.shape[:2] != r.shape[:2]:
            raise CliError(EXIT_BAD_CORPUS, f"{name}: NIR {n.shape[:2]} and RGB {r.shape[:2]} sizes differ")
        names.append(name)
        nirs.append(n)
        rgbs.append(r)
    if len({a.shape for a in nirs}) != 1:
        raise CliError(EXIT_BAD_CORPUS, "corpus images must share one size")
    return PairedData(np.stack(nirs), np.stack(rgbs), names)


def cmd_train(args) -> int:
    from dataclasses import replace

    from .checkpoint import load_training, save_training
    from .training import evaluate, init_state, train, train_config

    cfg = _run_config(args)
    data_dir = args.data or cfg.paths.get("data_dir")
    nir_dir = args.nir_dir or cfg.paths.get("nir_dir") or (data_dir and Path(data_dir) / "nir")
    rgb_dir = args.rgb_dir or cfg.paths.get("rgb_dir") or (data_dir and Path(data_dir) / "rgb")
    if not nir_dir or not rgb_dir:
        raise CliError(EXIT_CONFIG, "no corpus given (use --data or nir_dir/rgb_dir in the config)")
    data = load_corpus(nir_dir, rgb_dir)
    out_dir = Path(args.out or cfg.paths.get("out_dir") or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    train_cfg = cfg.train
    if args.schedule:
        train_cfg = train_config(args.schedule, seed=cfg.seed)
    if args.epochs is not None:
        train_cfg = replace(train_cfg, epochs=args.epochs)
    if args.resume:
        if not Path(args.resume).is_file():
            raise CliError(EXIT_NO_CHECKPOINT, f"checkpoint not found: {args.resume}")
        state = load_training(args.resume)
        state.cfg = replace(state.cfg, epochs=train_cfg.epochs)
    else:
        h, w = data.nir.shape[1:3]
        m = 2**cfg.model.depth
        if h % m or w % m:
            raise CliError(EXIT_BAD_SHAPE, f"corpus images {h}x{w} are not divisible by 2^depth = {m}")
        state = init_state(data, cfg.model, train_cfg, cfg.loss)
    ck_path = out_dir / "checkpoint.cmb"
    every = state.cfg.checkpoint_every

    def on_epoch(s):
        if every and s.epoch % every == 0:
            save_training(ck_path, s)

    log_path = Path(cfg.paths.get("log") or out_dir / "train.log")
    mode = "a" if args.resume else "w"
    try:
        with open(log_path, mode, encoding="utf-8") as log:
            train(data, state=state, log=log, callback=on_epoch)
    except TrainingDiverged as exc:
        _err(f"training diverged: {exc}")
        for k, v in exc.diagnostics.items():
            _err(f"  {k}: {v}")
        return EXIT_FAIL
    save_training(ck_path, state)
    ev = evaluate(state, data)
    print(f"epochs={state.epoch} d_steps={state.d_steps} g_steps={state.g_steps} "
          f"loss={ev['loss']:.6g} psnr_train={ev['psnr']:.3f}")
    print(f"checkpoint {ck_path}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import DEFAULT_LENGTHS, bench_scan, bench_scan2d, format_rows, growth_ratio

    if args.mode == "scan2d":
        sizes = [tuple(int(v) for v in s.split("x")) for s in args.sizes]
        print(format_rows(bench_scan2d(sizes, channels=args.batch, state_size=args.state_size,
                                       repeats=args.repeats)), end="")
        return EXIT_OK
    lengths = args.lengths or list(DEFAULT_LENGTHS)
    try:
        rows = bench_scan(lengths, args.state_size, args.batch, args.repeats)
    except ContractError as exc:
        _err(str(exc))
        return EXIT_FAIL
    print(format_rows(rows), end="")
    if 1024 in lengths and 4096 in lengths:
        for kernel in dict.fromkeys(r.kernel for r in rows):
            print(f"{kernel}: t(4096)/t(1024) = {growth_ratio(rows, kernel):.3f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import format_results, run_gradcheck

    try:
        results = run_gradcheck(args.blocks or None, seed=args.seed or 0)
    except KeyError as exc:
        raise CliError(EXIT_CONFIG, str(exc.args[0])) from None
    print(format_results(results), end="")
    failed = [r.name for r in results if not r.passed]
    if failed:
        _err("gradcheck failed: " + ", ".join(failed))
        return EXIT_FAIL
    return EXIT_OK


def cmd_eval(args) -> int:
    from .imageio import read_rgb
    from .metrics import evaluate_pair, format_csv, format_table

    pairs = _pair_dirs(args.pred_dir, args.gt_dir, "prediction/ground-truth")
    rows = []
    for name, pp, pg in pairs:
        pred, gt = _read(read_rgb, pp), _read(read_rgb, pg)
        if pred.shape != gt.shape:
            raise CliError(EXIT_BAD_CORPUS, f"{name}: shapes {pred.shape} and {gt.shape} differ")
        side = min(gt.shape[:2])
        win = min(11, side if side % 2 else side - 1)
        rows.append((name, evaluate_pair(pred, gt, win_size=win)))
    print(format_table(rows), end="")
    if args.csv:
        Path(args.csv).write_text(format_csv(rows), encoding="utf-8")
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    from .config import ABLATION_PRESETS

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key=value run configuration")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--preset", choices=sorted(ABLATION_PRESETS))

    parser = argparse.ArgumentParser(prog="colormamba", description="NIR-to-RGB translation toolkit")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("infer", parents=[common], help="colorize one NIR image")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("train", parents=[common], help="train on a paired corpus")
    p.add_argument("--data", help="directory with nir/ and rgb/ subdirectories")
    p.add_argument("--nir-dir")
    p.add_argument("--rgb-dir")
    p.add_argument("--out", help="output directory for checkpoint and log")
    p.add_argument("--epochs", type=int)
    p.add_argument("--schedule", choices=["paper", "desk", "overfit"])
    p.add_argument("--resume", metavar="CHECKPOINT")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", parents=[common], help="time the scan kernels")
    p.add_argument("--mode", choices=["scan", "scan2d"], default="scan")
    p.add_argument("--lengths", type=int, nargs="+")
    p.add_argument("--sizes", nargs="+", default=["8x8", "16x16", "32x32"])
    p.add_argument("--state-size", type=int, default=16)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--blocks", nargs="+")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("eval", parents=[common], help="metric report over matched image pairs")
    p.add_argument("pred_dir")
    p.add_argument("gt_dir")
    p.add_argument("--csv", metavar="PATH")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        _err(str(exc))
        return exc.code
    except ConfigError as exc:
        _err(f"configuration error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
