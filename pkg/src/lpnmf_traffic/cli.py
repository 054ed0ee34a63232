"""Command-line entry point: ``lpnmf-traffic <subcommand> [flags]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure, 5 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import load_config
from .errors import ConfigError, DataError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4, 5


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="sectioned key=value config file")
    common.add_argument("--out", type=Path, help="output directory (dataset for generate)")
    common.add_argument("--seed", type=_u64, help="master seed for every stage")
    common.add_argument("--lambda", dest="lam", type=float, help="regularization weight")
    common.add_argument("--s", type=int, help="embedding dimension (skips dimension selection)")
    common.add_argument("--k", type=int, help="number of clusters (skips K selection)")
    common.add_argument("--deterministic", action="store_true", default=None,
                        help="single-threaded linear algebra for bit-identical output")
    common.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lpnmf-traffic",
                                description="Congestion patterns and dynamics from traffic-state matrices.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    sub.add_parser("analyze", parents=[common], help="run the full pipeline on a dataset")
    sub.add_parser("export-viz", parents=[common], help="plot-ready tables from analyze outputs")
    sub.add_parser("select-dim", parents=[common], help="reconstruction error per candidate s")
    sub.add_parser("select-k", parents=[common], help="compactness per candidate K")
    return p


def _run(args) -> int:
    cfg = load_config(args.config)
    cfg = cfg.with_overrides(seed=args.seed, lam=args.lam, s=args.s, K=args.k,
                             deterministic=args.deterministic,
                             out=None if args.command == "generate" else args.out)

    if args.command == "generate":
        target = args.out or cfg.dataset_path
        path = pipeline.generate(cfg, target, force=args.force)
        print(f"wrote dataset to {path}")
        return EXIT_OK

    if args.command == "analyze":
        summary = pipeline.analyze(cfg)
        fac, clu = summary["factorization"], summary["clustering"]
        print(f"s={fac['s']} K={clu['K']} iterations={fac['iterations']} -> {cfg.output_dir}")
        return EXIT_OK

    if args.command == "export-viz":
        points, lines = pipeline.export_viz(cfg)
        print(f"wrote {points} and {lines}")
        return EXIT_OK

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with pipeline.thread_limits(cfg.deterministic):
        matrix, _, topology, _ = pipeline.load_inputs(cfg)
        graph = pipeline.build_graph(cfg, matrix, topology, out)
        if args.command == "select-dim":
            sel = pipeline.run_select_dimension(cfg, matrix, graph)
            pipeline.write_dimension_selection(out / "dimension_selection.csv", sel)
            for s, e in zip(sel.candidates, sel.errors):
                print(f"s={s}\terror={e:.6g}")
            print(f"recommended s={sel.recommended}")
            return EXIT_OK
        with pipeline.stage("factorization"):
            result = pipeline.factorize(matrix, graph, pipeline.factorization_config(cfg))
        ksel = pipeline.run_select_k(cfg, matrix, result.V)
        pipeline.write_compactness(out / "compactness.csv", {"lpnmf": ksel})
        for K, rep in zip(ksel.candidates, ksel.reports):
            print(f"K={K}\tc={rep.c:.6g}")
        print(f"recommended K={ksel.recommended}")
        return EXIT_OK


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DataError):
        return EXIT_DATA
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, OSError):
        return EXIT_IO
    raise exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return _run(args)
    except (ConfigError, DataError, NumericalError, OSError) as exc:
        where = getattr(exc, "stage", None)
        print(f"error{f' in {where}' if where else ''}: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
