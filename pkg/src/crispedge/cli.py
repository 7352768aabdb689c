"""``crispedge`` command line: synth, train, predict, eval, baseline.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import classic
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, load_config
from .data import gen_synthetic, load_dataset, load_gt_dir, load_probmaps, read_image, save_dataset, save_probmap
from .evaluation import default_thresholds, evaluate, write_pr_csv, write_report_csv
from .network import LUSNet

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("crispedge")


class UsageError(Exception):
    pass


def _thresholds(text: Optional[str]):
    if text is None:
        return None
    try:
        if "," in text:
            values = [float(v) for v in text.split(",") if v.strip()]
            if len(values) < 2:
                raise ValueError
            return np.asarray(values)
        return default_thresholds(int(text))
    except ValueError:
        raise UsageError(f"--thresholds: expected a count or comma-separated list, got {text!r}") from None


def _jobs(n: int) -> int:
    if n < 1:
        raise UsageError("--jobs must be >= 1")
    return n


def _read_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        return load_config(path)
    except OSError as exc:
        raise RuntimeError(f"cannot read config {path}: {exc.strerror or exc}") from None


def cmd_synth(args) -> int:
    pairs = gen_synthetic(args.n, args.size, args.seed)
    try:
        save_dataset(pairs, args.out_dir)
    except OSError as exc:
        raise RuntimeError(f"cannot write dataset to {args.out_dir}: {exc.strerror or exc}") from None
    print(f"wrote {len(pairs)} samples to {args.out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import train

    cfg = _read_config(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.out_dir is not None:
        cfg.data.out_dir = args.out_dir
    if not cfg.data.train_dir:
        raise ConfigError("data.train_dir: required for training")
    train_pairs = load_dataset(cfg.data.train_dir)
    val_pairs = load_dataset(cfg.data.val_dir) if cfg.data.val_dir else []
    if not train_pairs:
        raise RuntimeError(f"no training images found in {cfg.data.train_dir}")
    result = train(cfg, train_pairs, val_pairs, Path(cfg.data.out_dir),
                   progress=lambda r: print(f"epoch {r.epoch}: loss {r.loss:.5f}" +
                                            ("" if r.val_ods != r.val_ods else f", val ODS {r.val_ods:.4f}")))
    print(f"checkpoints in {cfg.data.out_dir} (best epoch {result.best_epoch})")
    return EXIT_OK


def _load_model(checkpoint: str, config: Optional[str]) -> LUSNet:
    ckpt = Path(checkpoint)
    cfg_path = config or (ckpt.parent / "config.yaml" if (ckpt.parent / "config.yaml").exists() else None)
    cfg = _read_config(str(cfg_path) if cfg_path else None)
    model = LUSNet(cfg.net)
    model.load(ckpt)
    model.eval()
    return model


def cmd_predict(args) -> int:
    jobs = _jobs(args.jobs)
    try:
        model = _load_model(args.checkpoint, args.config)
    except OSError as exc:
        raise RuntimeError(f"cannot read checkpoint {args.checkpoint}: {exc.strerror or exc}") from None
    in_dir, out_dir = Path(args.in_dir), Path(args.out_dir)
    paths = sorted(in_dir.glob("*.png"))
    if not paths:
        raise RuntimeError(f"no PNG images in {in_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    stride = 2 ** (len(model.cfg.stage_widths) - 1)

    def run(path: Path) -> None:
        img = read_image(path)
        h, w = img.shape[1:]
        ph, pw = (-h) % stride, (-w) % stride
        if ph or pw:
            img = np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="edge")
        save_probmap(model.predict(img)[:h, :w], out_dir / path.name)

    _map(run, paths, jobs)
    print(f"wrote {len(paths)} probability maps to {out_dir}")
    return EXIT_OK


def _map(fn, items, jobs: int) -> List:
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def cmd_eval(args) -> int:
    thresholds, jobs = _thresholds(args.thresholds), _jobs(args.jobs)
    preds = load_probmaps(args.pred_dir)
    gts = load_gt_dir(args.gt_dir)
    missing = sorted(set(preds) ^ set(gts))
    if missing:
        raise RuntimeError(f"prediction and ground-truth ids differ: {missing[:5]}")
    if not preds:
        raise RuntimeError(f"no predictions found in {args.pred_dir}")
    ids = sorted(preds)
    report = evaluate([preds[i] for i in ids], [gts[i] for i in ids], args.mode,
                      thresholds, args.tolerance, jobs=jobs)
    out = Path(args.out or args.pred_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, out / f"report_{report.mode}.csv")
    write_pr_csv(report, out / f"pr_{report.mode}.csv")
    print(f"ODS={report.ods_f:.4f} (t={report.ods_threshold:.2f}) OIS={report.ois_f:.4f} AP={report.ap:.4f}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    jobs = _jobs(args.jobs)
    if args.op not in classic.OPERATORS:
        raise UsageError(f"unknown operator {args.op!r}; valid operators: {', '.join(classic.OPERATORS)}")
    if args.op == "canny":
        kwargs = {"sigma": args.sigma, "low": args.low, "high": args.high}
    else:
        kwargs = {}
    in_dir, out_dir = Path(args.in_dir), Path(args.out_dir)
    paths = sorted(in_dir.glob("*.png"))
    if not paths:
        raise RuntimeError(f"no PNG images in {in_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)

    def run(path: Path) -> None:
        img = read_image(path).mean(axis=0)
        save_probmap(classic.run_operator(args.op, img, **kwargs), out_dir / path.name)

    _map(run, paths, jobs)
    print(f"wrote {len(paths)} {args.op} maps to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crispedge", description="Crisp edge detection toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic shape dataset")
    s.add_argument("n", type=int)
    s.add_argument("size", type=int)
    s.add_argument("seed", type=int)
    s.add_argument("out_dir")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out-dir")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="write probability maps for a folder of images")
    pr.add_argument("checkpoint")
    pr.add_argument("in_dir")
    pr.add_argument("out_dir")
    pr.add_argument("--config", help="run config (defaults to config.yaml beside the checkpoint)")
    pr.add_argument("--jobs", type=int, default=1)
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="score probability maps against ground truth")
    e.add_argument("pred_dir")
    e.add_argument("gt_dir")
    e.add_argument("--mode", choices=("s-eval", "c-eval"), default="c-eval")
    e.add_argument("--tolerance", type=float, help="match distance in pixels (default: 0.0075 x diagonal, rounded up)")
    e.add_argument("--thresholds", help="threshold count, or comma-separated values")
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--out", help="directory for report CSVs (default: pred_dir)")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("baseline", help="run a classical edge operator over a folder")
    b.add_argument("op", help=f"one of: {', '.join(classic.OPERATORS)}")
    b.add_argument("in_dir")
    b.add_argument("out_dir")
    b.add_argument("--sigma", type=float, default=1.0)
    b.add_argument("--low", type=float, default=0.1)
    b.add_argument("--high", type=float, default=0.2)
    b.add_argument("--jobs", type=int, default=1)
    b.set_defaults(func=cmd_baseline)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"crispedge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, CheckpointError, RuntimeError, OSError, ValueError) as exc:
        print(f"crispedge: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
