"""Command-line front end.

Exit codes: 0 success, 2 usage or invalid argument, 3 unreadable or
malformed input file, 4 numeric divergence during training.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import data as datamod
from . import experiments as exp
from . import lattice as lat
from .errors import InvalidArgument, LipsortError, ParseError, TrainingDiverged
from .linalg import norm_key, op_norm_inf
from .network import certify_batch, forward, load, save
from .training import TrainConfig, empirical_lipschitz, metrics_csv, train

EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_DIVERGED = 4


class InputFileError(LipsortError):
    pass


def _norm_arg(text: str) -> str:
    try:
        return norm_key(text)
    except InvalidArgument as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_common(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="random seed")
    p.add_argument("--norm", type=_norm_arg, default=d, help="l2 or linf (default linf)")
    p.add_argument("--out-dir", default=d if suppress else ".", help="directory for default output paths")


def _add_data_source(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("dataset")
    g.add_argument("--data", help="dataset CSV (x0,...,label)")
    g.add_argument("--mnist-dir", help="directory holding the four MNIST IDX files")
    g.add_argument("--split", choices=("train", "test"), default="train")
    g.add_argument("--offset", type=int, default=0, help="skip this many MNIST samples")
    g.add_argument("--limit", type=int, help="use at most this many samples")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lipsort", description="Lipschitz-constrained GroupSort networks."
    )
    _add_common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("gen-data", help="write a dataset CSV (spiral or MNIST export)")
    _add_common(p, suppress=True)
    p.add_argument("--kind", choices=("spiral", "mnist"), default="spiral")
    p.add_argument("--points-per-class", type=int, default=500)
    p.add_argument("--turns", type=float, default=1.75)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--mnist-dir")
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--limit", type=int)
    p.add_argument("--out", help="output CSV (default OUT_DIR/<kind>.csv)")

    p = sub.add_parser("train", help="train a network with the Lipschitz penalty")
    _add_common(p, suppress=True)
    _add_data_source(p)
    p.add_argument("--config", help="key=value config file; flags below override it")
    p.add_argument("--arch", help='architecture, e.g. "40:gs10,40:gs10,2:none"')
    p.add_argument("--lam", type=float, help="penalty weight on the Lipschitz bound")
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-final", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--optimizer", choices=("adam", "sgd_momentum"))
    p.add_argument("--project", action="store_true", default=None, help="hard norm projection after each step")
    p.add_argument("--projection", choices=("rescale", "l1_ball"))
    p.add_argument("--model", help="output model (default OUT_DIR/model.net)")
    p.add_argument("--metrics", help="output metrics CSV (default OUT_DIR/metrics.csv)")

    p = sub.add_parser("certify", help="per-input certified radii")
    _add_common(p, suppress=True)
    _add_data_source(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", help="report CSV (default OUT_DIR/certify.csv)")
    p.add_argument("--region-grid", type=int, help="also write a certified-region grid of this many points per axis (2-D inputs)")
    p.add_argument("--region-radius", type=float, default=0.1)
    p.add_argument("--region-lo", type=_floats, default=[-1.1, -1.1])
    p.add_argument("--region-hi", type=_floats, default=[1.1, 1.1])
    p.add_argument("--region-out", help="region CSV (default OUT_DIR/region.csv)")

    p = sub.add_parser("compile-lattice", help="compile a lattice file into an exact 3-layer FullSort net")
    _add_common(p, suppress=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--check-points", type=int, default=10000, help="random domain points for the exactness report")
    p.add_argument("--report", help="also write the exactness report here")

    p = sub.add_parser("estimate-lipschitz", help="bound vs. largest grid slope (tightness row)")
    _add_common(p, suppress=True)
    p.add_argument("--model", required=True)
    p.add_argument("--lo", type=_floats, help="box lower corner (default -1 per input)")
    p.add_argument("--hi", type=_floats, help="box upper corner (default 1 per input)")
    p.add_argument("--grid", type=int, default=301, help="grid points per dimension")
    p.add_argument("--name", default="model")
    p.add_argument("--out", help="append the row to this CSV as well")

    p = sub.add_parser("eval-curve", help="certified accuracy vs. radius")
    _add_common(p, suppress=True)
    _add_data_source(p)
    p.add_argument("--model", required=True)
    p.add_argument("--radii", default="0:0.3:0.01", help="start:stop:step (stop inclusive)")
    p.add_argument("--out", help="curve CSV (default OUT_DIR/curve.csv)")

    p = sub.add_parser("demo-halfgable", help="half-gable fits, compiled net and plot grids")
    _add_common(p, suppress=True)
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--grid", type=int, default=101)
    return parser


def _out_path(args, explicit, default_name) -> Path:
    path = Path(explicit) if explicit else Path(args.out_dir) / default_name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _load_dataset(args) -> datamod.LabeledDataset:
    try:
        if args.data:
            ds = datamod.load_csv(args.data)
        elif args.mnist_dir:
            end = None if args.limit is None else args.offset + args.limit
            ds = datamod.load_mnist_dir(args.mnist_dir, args.split, limit=end)
            ds = ds.subset(slice(args.offset, None))
            return ds
        else:
            raise InvalidArgument("give --data or --mnist-dir")
    except (OSError, ParseError) as exc:
        raise InputFileError(str(exc)) from exc
    if args.limit is not None:
        ds = ds.subset(slice(args.offset, args.offset + args.limit))
    elif args.offset:
        ds = ds.subset(slice(args.offset, None))
    return ds


def _load_model(path):
    try:
        return load(path)
    except (OSError, ParseError) as exc:
        raise InputFileError(f"{path}: {exc}") from exc


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def cmd_gen_data(args) -> int:
    if args.kind == "spiral":
        spec = datamod.SpiralSpec(args.points_per_class, args.turns, args.noise, args.seed or 0)
        ds = datamod.gen_spiral(spec)
    else:
        if not args.mnist_dir:
            raise InvalidArgument("--kind mnist needs --mnist-dir")
        try:
            ds = datamod.load_mnist_dir(args.mnist_dir, args.split, limit=args.limit)
        except (OSError, ParseError) as exc:
            raise InputFileError(str(exc)) from exc
    path = _out_path(args, args.out, f"{args.kind}.csv")
    datamod.save_csv(ds, path)
    print(f"wrote {len(ds)} samples to {path}")
    return 0


def _train_config(args, num_classes: int) -> TrainConfig:
    base = TrainConfig()
    if args.config:
        try:
            base = TrainConfig.from_file(args.config)
        except OSError as exc:
            raise InputFileError(str(exc)) from exc
    overrides = {
        "architecture": args.arch,
        "lam": args.lam,
        "learning_rate": args.lr,
        "lr_final": args.lr_final,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "optimizer": args.optimizer,
        "project": args.project,
        "projection": args.projection,
        "seed": args.seed,
        "norm_p": args.norm,
    }
    overrides = {k: str(v) for k, v in overrides.items() if v is not None}
    cfg = TrainConfig.from_mapping(overrides, base) if overrides else base
    if cfg.architecture[-1][0] != num_classes:
        raise InvalidArgument(
            f"architecture ends in {cfg.architecture[-1][0]} outputs but the data has {num_classes} classes"
        )
    return cfg


def cmd_train(args) -> int:
    ds = _load_dataset(args)
    cfg = _train_config(args, ds.num_classes)
    res = train(cfg, ds, on_epoch=lambda m: print(
        f"epoch {m.epoch:4d}  loss {m.loss:.5f}  acc {m.clean_acc:.4f}  bound {m.bound:.4f}",
        file=sys.stderr,
    ))
    model = _out_path(args, args.model, "model.net")
    save(res.net, model)
    metrics = _out_path(args, args.metrics, "metrics.csv")
    metrics.write_text(metrics_csv(res.metrics))
    print(f"wrote {model} and {metrics}")
    return 0


def cmd_certify(args) -> int:
    net = _load_model(args.model)
    ds = _load_dataset(args)
    p = args.norm or net.train_norm or "inf"
    c = certify_batch(net, ds.inputs, p)
    rows = (
        (i, int(ds.labels[i]), int(c.predicted[i]), c.margin[i], c.lipschitz_bound, c.radius[i], c.norm_p)
        for i in range(len(ds))
    )
    path = _out_path(args, args.out, "certify.csv")
    _write_rows(path, ["index", "label", "predicted", "margin", "bound", "radius", "norm"], rows)
    print(f"wrote {len(ds)} rows to {path}")
    if args.region_grid:
        region = exp.certified_region(net, args.region_lo, args.region_hi, args.region_grid, args.region_radius, p)
        rpath = _out_path(args, args.region_out, "region.csv")
        _write_rows(
            rpath,
            ["x0", "x1", "predicted", "radius", "certified"],
            ([r[0], r[1], int(r[2]), r[3], bool(r[4])] for r in region),
        )
        print(f"wrote {rpath}")
    return 0


def cmd_compile_lattice(args) -> int:
    try:
        L = lat.load_lattice(args.input)
    except (OSError, ParseError) as exc:
        raise InputFileError(str(exc)) from exc
    net = lat.compile_to_fullsort(L)
    save(net, args.out)
    rng = np.random.default_rng(args.seed or 0)
    Z = rng.uniform(L.lo, L.hi, size=(args.check_points, L.dim))
    Z = np.concatenate([Z, np.array([L.lo, L.hi])])
    err = float(np.abs(forward(net, Z)[:, 0] - lat.eval_lattice(L, Z)).max())
    norms = [op_norm_inf(W) for W in net.weights]
    report = (
        f"planes={len(L.planes)} subsets={len(L.subsets)} alpha={lat.compute_alpha(L)!r}\n"
        f"points={len(Z)} max_err={err!r}\n"
        f"weight_norms_inf={','.join(repr(n) for n in norms)}\n"
    )
    sys.stdout.write(report)
    if args.report:
        Path(args.report).write_text(report)
    return 0


def cmd_estimate(args) -> int:
    net = _load_model(args.model)
    p = args.norm or net.train_norm or "inf"
    d = net.input_dim
    lo = args.lo if args.lo is not None else [-1.0] * d
    hi = args.hi if args.hi is not None else [1.0] * d
    est = empirical_lipschitz(net, lo, hi, args.grid, p)
    header = "algorithm,lipschitz_bound,largest_gradient,ratio"
    row = f"{args.name},{est.bound:.2f},{est.empirical:.2f},{est.ratio:.2f}"
    print(header)
    print(row)
    if args.out:
        path = Path(args.out)
        new = not path.exists()
        with open(path, "a") as fh:
            if new:
                fh.write(header + "\n")
            fh.write(row + "\n")
    return 0


def _parse_radii(text: str) -> np.ndarray:
    try:
        start, stop, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise InvalidArgument(f"--radii expects start:stop:step, got {text!r}") from None
    if step <= 0 or stop < start:
        raise InvalidArgument("--radii needs step > 0 and stop >= start")
    n = int(round((stop - start) / step)) + 1
    return np.round(start + step * np.arange(n), 12)


def cmd_eval_curve(args) -> int:
    net = _load_model(args.model)
    ds = _load_dataset(args)
    p = args.norm or net.train_norm or "inf"
    curve = exp.certified_accuracy_curve(net, ds, _parse_radii(args.radii), p)
    path = _out_path(args, args.out, "curve.csv")
    _write_rows(path, ["radius", "certified_acc", "clean_acc"], curve)
    print(f"wrote {path}")
    return 0


def cmd_demo_halfgable(args) -> int:
    seed = args.seed or 0
    demo = exp.half_gable_demo(seeds=range(seed, seed + args.restarts), eval_points=args.grid)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save(demo.compiled, out / "halfgable_compiled.net")
    save(demo.two_layer.net, out / "halfgable_2layer.net")
    save(demo.three_layer.net, out / "halfgable_3layer.net")
    lat.save_lattice(demo.lattice, out / "halfgable.lat")
    _write_rows(out / "halfgable_grid.csv", ["x", "y", "target", "two_layer", "three_layer", "compiled"], demo.grid)
    _write_rows(out / "halfgable_onehot.csv", ["x", "y", "pick0", "pick1", "pick2"], demo.naive_outputs)
    print(f"compiled  max_err={demo.compiled_max_err:.3e}  norms={demo.compiled_norms}")
    print(f"2-layer   max_err={demo.two_layer.grid_max_err:.4f}  train_loss={demo.two_layer.train_loss:.3e}")
    print(f"3-layer   max_err={demo.three_layer.grid_max_err:.4f}  train_loss={demo.three_layer.train_loss:.3e}")
    print(f"wrote grids and models to {out}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "certify": cmd_certify,
    "compile-lattice": cmd_compile_lattice,
    "estimate-lipschitz": cmd_estimate,
    "eval-curve": cmd_eval_curve,
    "demo-halfgable": cmd_demo_halfgable,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not args.command:
        parser.print_usage(sys.stderr)
        print("lipsort: error: a command is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except InputFileError as exc:
        print(f"lipsort: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TrainingDiverged as exc:
        print(f"lipsort: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (InvalidArgument, LipsortError) as exc:
        print(f"lipsort: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
