"""Command-line entry point: ``salfold <command> [options]``.

Exit status: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline
from .errors import DataError, UsageError
from .imagecore import SyntheticSpec, generate_synthetic_corpus

log = logging.getLogger("salfold")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--manifest", type=Path, help="dataset manifest (overrides config)")
    p.add_argument("--output", type=Path, help="artifact directory (overrides config)")
    p.add_argument("--threads", type=int, help="worker threads for per-image work")
    p.add_argument("--seed", type=int)
    p.add_argument("--fold", choices=pipeline.FOLD_MODES)
    p.add_argument("--grid", type=int, help="block grid before folding (default 4)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="any config key, e.g. svm.C=10; repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="salfold", description="Saliency-guided folding, LBP features and SVM classification.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="render a synthetic labelled corpus")
    s.add_argument("out", type=Path)
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--train", type=int, default=50, help="train images per class")
    s.add_argument("--test", type=int, default=20, help="test images per class")
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--seed", type=int, default=1)

    for name, text in (
        ("preprocess", "saliency template, folding plan, folded training cache"),
        ("train", "extract LBP features and train the one-vs-one SVM"),
        ("evaluate", "classify the test split and report the hierarchical error"),
        ("bench", "compare the unfolded and folded arms"),
    ):
        p = sub.add_parser(name, help=text)
        _common(p)
        if name == "evaluate":
            p.add_argument("--predictions", type=Path, help="score an existing image_id<TAB>code file")

    c = sub.add_parser("classify", help="classify one query image")
    _common(c)
    c.add_argument("image", type=Path)
    return parser


def config_from_args(args) -> pipeline.PipelineConfig:
    cfg = pipeline.read_config(args.config) if args.config else pipeline.PipelineConfig()
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if overrides:
        cfg = pipeline.config_from_mapping(overrides, Path.cwd(), cfg)
    direct = {k: getattr(args, k) for k in ("manifest", "output", "threads", "seed", "fold", "grid")}
    direct = {k: v for k, v in direct.items() if v is not None}
    return replace(cfg, **direct) if direct else cfg


def run(args) -> int:
    if args.command == "synth":
        spec = SyntheticSpec(args.classes, args.train, args.test, args.size, args.noise, args.seed)
        manifest = generate_synthetic_corpus(spec, args.out)
        print(f"wrote {len(manifest.entries)} images, manifest {args.out / 'manifest.tsv'}")
        return EXIT_OK

    cfg = config_from_args(args)
    if args.command == "preprocess":
        res = pipeline.cmd_preprocess(cfg)
        if res.plan is None:
            print("fold mode off: nothing to preprocess")
        else:
            print(f"plan: column {res.plan.column[0]}->{res.plan.column[1]}, "
                  f"row {res.plan.row[0]}->{res.plan.row[1]}"
                  + (" (degenerate template)" if res.plan.degenerate else ""))
            print(f"folded {len(res.folded)} training images in {res.seconds:.2f} s")
    elif args.command == "train":
        res = pipeline.cmd_train(cfg)
        m = res.model
        print(f"trained {len(m.binaries)} binary models over {m.n_classes} classes, "
              f"{m.dims} dims, in {res.seconds:.2f} s")
    elif args.command == "classify":
        res = pipeline.cmd_classify(cfg, args.image)
        print(f"class {res.label}\t{res.code}\t{1e3 * res.seconds:.3f} ms")
    elif args.command == "evaluate":
        res = pipeline.cmd_evaluate(cfg, args.predictions)
        sys.stdout.write(res.report)
        print(f"accuracy {res.accuracy:.4f}")
    elif args.command == "bench":
        report = pipeline.cmd_bench(cfg)
        sys.stdout.write(report.table())
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except UsageError as exc:
        print(f"salfold: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"salfold: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - last-resort mapping
        log.debug("internal error", exc_info=True)
        print(f"salfold: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
