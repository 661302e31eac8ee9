"""Command-line entry point: ``scatterconv bench`` and ``scatterconv train``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import bench
from .train import TrainConfig, TrainingDiverged, train, write_metrics

log = logging.getLogger("scatterconv.cli")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scatterconv")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    defaults = bench.SweepConfig()
    b = sub.add_parser("bench", help="benchmark sweep across dataflow modes")
    b.add_argument("--sizes", type=_int_list, default=defaults.sizes)
    b.add_argument("--cin", type=_int_list, default=defaults.cin)
    b.add_argument("--cout", type=_int_list, default=defaults.cout)
    b.add_argument("--orientations", type=int, default=defaults.orientations)
    b.add_argument("--modes", type=_str_list, default=defaults.modes)
    b.add_argument("--kernel", type=int, default=defaults.kernel)
    b.add_argument("--repeats", type=int, default=defaults.repeats)
    b.add_argument("--warmup", type=int, default=defaults.warmup)
    b.add_argument("--workers", type=int, default=defaults.workers)
    b.add_argument("--seed", type=int, default=defaults.seed)
    b.add_argument("--dtype", choices=["float32", "float64"], default=defaults.dtype)
    b.add_argument("--out", required=True)
    b.add_argument("--format", choices=["csv", "md"], default="csv")

    td = TrainConfig()
    t = sub.add_parser("train", help="train the micro segmentation net")
    t.add_argument("--orientations", type=int, choices=[1, 4, 8, 16], default=td.orientations)
    t.add_argument("--epochs", type=int, default=td.epochs)
    t.add_argument("--lr", type=float, default=td.lr)
    t.add_argument("--lambda-mag", type=float, default=td.lambda_mag)
    t.add_argument("--lambda-orth", type=float, default=td.lambda_orth)
    t.add_argument("--seed", type=int, default=td.seed)
    t.add_argument("--size", type=int, default=td.size)
    t.add_argument("--n-train", type=int, default=td.n_train)
    t.add_argument("--hidden", type=int, default=td.hidden)
    t.add_argument("--pool", choices=["max", "avg"], default=td.pool)
    t.add_argument("--workers", type=int, default=td.workers)
    t.add_argument("--out", default="metrics.csv")
    return parser


def _run_bench(args) -> int:
    cfg = bench.SweepConfig(
        sizes=args.sizes, cin=args.cin, cout=args.cout, orientations=args.orientations,
        modes=args.modes, kernel=args.kernel, repeats=args.repeats, warmup=args.warmup,
        workers=args.workers, seed=args.seed, dtype=args.dtype,
    )
    emit = bench.emit_csv if args.format == "csv" else bench.emit_markdown
    status = 0
    try:
        records = bench.run_sweep(cfg, progress=lambda r: log.info(
            "%s %dx%d cin=%d cout=%d: %.3f ms", r.mode, r.input_size, r.input_size,
            r.in_channels, r.out_channels, r.wall_ms))
    except bench.CrossCheckFailed as exc:
        for f in exc.failures:
            print(f"cross-check failed: {f}", file=sys.stderr)
        records = exc.records
        status = 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if records:
        emit(records, args.out)
    return status


def _run_train(args) -> int:
    cfg = TrainConfig(
        orientations=args.orientations, epochs=args.epochs, lr=args.lr,
        lambda_mag=args.lambda_mag, lambda_orth=args.lambda_orth, seed=args.seed,
        size=args.size, n_train=args.n_train, hidden=args.hidden, pool=args.pool,
        workers=args.workers,
    )
    try:
        report = train(cfg)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1
    write_metrics(report, args.out)
    final = report.final
    print(f"orientations={cfg.orientations} val_acc={final['val_acc']:.4f} "
          f"rot_test_acc={final['rot_test_acc']:.4f} test_acc={report.test_acc:.4f}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "bench":
        return _run_bench(args)
    return _run_train(args)


if __name__ == "__main__":
    sys.exit(main())
