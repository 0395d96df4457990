"""Command-line entry point: ``mcd-da {train,eval,export-boundary,verify-bound}``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import experiment
from .boundary import compute_raster, padded_extent
from .config import load_config
from .data import LabeledDataset, make_moons, rotate
from .errors import ConfigError, DataError, EnumerationCapExceeded
from .mcd import TrainingConfig, accuracy
from .theory import enumerate_stumps, verify_bound

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NOT_2D = 4
EXIT_CAP = 5


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _grid(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 300x300, got {text!r}") from None
    if w < 2 or h < 2:
        raise argparse.ArgumentTypeError("grid needs at least 2x2 cells")
    return w, h


def cmd_train(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.out:
            cfg.out = args.out
        if args.seed is not None:
            seeds = TrainingConfig.seeded(args.seed)
            cfg.training.g_seed, cfg.training.f1_seed = seeds.g_seed, seeds.f1_seed
            cfg.training.f2_seed, cfg.training.data_seed = seeds.f2_seed, seeds.data_seed
        if args.rotation is not None:
            cfg.rotation = args.rotation
        cfg.validate()
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG

    def progress(row):
        if args.verbose:
            print(f"iter {row.iter}: loss_cls={row.loss_cls:.4f} loss_adv={row.loss_adv:.4f} "
                  f"acc_tgt_f1={row.acc_tgt_f1:.4f}", file=sys.stderr)

    try:
        result, data = experiment.run_experiment(cfg, progress)
    except DataError as exc:
        _err(str(exc))
        return EXIT_DATA
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    experiment.save_run(cfg.out, cfg, result, data)
    print(f"target_acc={result.target_acc!r}")
    return 0


def _eval_dataset(args, cfg, norm):
    if args.data:
        ds = experiment.load_reference(args.data, cfg.downsample, cfg.training.num_classes)
        if not isinstance(ds, LabeledDataset):
            raise DataError("evaluation data must be labeled")
        if ds.dim != norm.mean.shape[0]:
            raise DataError(f"model expects {norm.mean.shape[0]} features, data has {ds.dim}")
        return norm(ds)
    if cfg.kind == "toy":
        _, _, test = experiment.toy_data(cfg, rotation=args.rotation)
        return norm(test)
    return experiment.build_datasets(cfg).target_eval


def cmd_eval(args) -> int:
    try:
        cfg, model, norm = experiment.load_run(args.checkpoint_dir)
        ds = _eval_dataset(args, cfg, norm)
    except (DataError, ConfigError) as exc:
        _err(str(exc))
        return EXIT_DATA
    p1, p2 = model.predict(ds.features)
    dis = float(np.count_nonzero(p1 != p2)) / len(ds)
    print(f"acc_f1={accuracy(p1, ds.labels)!r} acc_f2={accuracy(p2, ds.labels)!r} disagreement={dis!r}")
    return 0


def cmd_export_boundary(args) -> int:
    try:
        cfg, model, norm = experiment.load_run(args.checkpoint_dir)
    except (DataError, ConfigError) as exc:
        _err(str(exc))
        return EXIT_DATA
    if model.g.in_dim != 2:
        _err(f"decision boundaries need a 2-D input model, this one takes {model.g.in_dim}")
        return EXIT_NOT_2D
    if cfg.kind == "toy":
        source, target, _ = experiment.toy_data(cfg)
        points = np.vstack([source.features, target.features])
    else:
        points = experiment.build_datasets(cfg).raw_points
    w, h = args.grid
    raster = compute_raster(model, norm, padded_extent(points), w, h)
    out = Path(args.out or args.checkpoint_dir)
    out.mkdir(parents=True, exist_ok=True)
    raster.write_csv(out / "boundary.csv")
    raster.write_ppm(out / "boundary.ppm")
    print(f"disagree_pixels={raster.disagree_pixels}")
    return 0


def cmd_verify_bound(args) -> int:
    source = make_moons(args.n_per_class, args.noise, args.seed)
    target = rotate(source, args.rotation)
    try:
        hyps = enumerate_stumps(source, target)
    except EnumerationCapExceeded as exc:
        _err(str(exc))
        return EXIT_CAP
    report = verify_bound(hyps, source, target)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write(out / "bound_report.txt")
    print(f"holds={'true' if report.holds else 'false'} d_hdh={report.d_hdh!r} "
          f"d_h={report.d_h!r} lambda_ideal={report.lambda_ideal!r} slack={report.bound_slack!r}")
    return 0 if report.holds else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcd-da", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train G, F1, F2 from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides the config's 'out')")
    p.add_argument("--seed", type=int, help="derive all four seeds from this base seed")
    p.add_argument("--rotation", type=float, help="toy target rotation in degrees")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of both heads on a labeled dataset")
    p.add_argument("checkpoint_dir")
    p.add_argument("--data", help="labeled CSV or 'images.idx,labels.idx'; default: the run's target test set")
    p.add_argument("--rotation", type=float, help="toy only: regenerate the test set at this rotation")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-boundary", help="rasterize both heads' decisions over the data box")
    p.add_argument("checkpoint_dir")
    p.add_argument("--grid", type=_grid, default=(300, 300), help="WxH, default 300x300")
    p.add_argument("--out", help="output directory (default: checkpoint_dir)")
    p.set_defaults(func=cmd_export_boundary)

    p = sub.add_parser("verify-bound", help="exact bound check on moons vs rotated moons with stumps")
    p.add_argument("--rotation", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-per-class", type=int, default=300)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_verify_bound)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
