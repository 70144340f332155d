"""Command-line entry point.

    bravoeval fuse      --manifest M --out DIR
    bravoeval eval      --manifest M [--out FILE] [--format json|table] [--figures DIR]
    bravoeval summarize REPORT [REPORT ...]
    bravoeval synth     --out DIR --seed N [fixture flags]

Exit codes: 0 success, 1 item failure or degenerate metric under
``--degenerate-policy error``, 2 configuration or schema error. Logs go to
stderr; reports go to ``--out`` or stdout. ``BRAVOEVAL_WORKERS`` and
``BRAVOEVAL_LOG_LEVEL`` set the default worker count and log level.
"""

import argparse
import logging
import os
import sys
from pathlib import Path

from .aggregate import SUBSETS, comparable_config, load_report, render_comparison, render_report
from .errors import BravoError, FixtureSpecError, SchemaError, ValidationError
from .ingest import load_manifest
from .metrics import DEFAULT_ECE_BINS, DEGENERATE_POLICIES
from .oracle import FixtureSpec, export_suite, fixture_suite
from .runner import RunConfig, evaluate_manifest, fuse_manifest

log = logging.getLogger("bravoeval")

EXIT_OK, EXIT_ITEM, EXIT_CONFIG = 0, 1, 2


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _range(text):
    lo, hi = (float(v) for v in text.split(","))
    return lo, hi


def _write(text, out):
    if out is None or str(out) == "-":
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def cmd_fuse(args):
    config = RunConfig(manifest=args.manifest, out=args.out, workers=args.workers, decoder=args.decoder)
    manifest = load_manifest(config.manifest)
    path, failures = fuse_manifest(manifest, config.out, config.workers, config.decoder)
    log.info("wrote %s", path)
    return EXIT_ITEM if failures else EXIT_OK


def cmd_eval(args):
    config = RunConfig(
        manifest=args.manifest,
        out=args.out,
        workers=args.workers,
        ece_bins=args.ece_bins,
        degenerate_policy=args.degenerate_policy,
        format=args.format,
        decoder=args.decoder,
    )
    manifest = load_manifest(config.manifest)
    result = evaluate_manifest(manifest, config)
    label = Path(config.manifest).stem if args.label is None else args.label
    _write(render_report(result.report, config.format, label=label), config.out)
    if args.figures:
        from .plotting import render_figures

        for path in render_figures(result.accumulators, args.figures):
            log.info("figure %s", path)
    if result.failures:
        return EXIT_ITEM
    if config.degenerate_policy == "error" and result.degenerate:
        for subset, kind, key in result.degenerate:
            log.error("degenerate %s metric %s on %s", kind, key, subset)
        return EXIT_ITEM
    return EXIT_OK


def cmd_summarize(args):
    named = []
    for path in args.reports:
        named.append((Path(path).stem, load_report(Path(path).read_text())))
    reference = comparable_config(named[0][1].config)
    for name, rep in named[1:]:
        other = comparable_config(rep.config)
        if other != reference:
            diff = sorted(k for k in set(reference) | set(other) if reference.get(k) != other.get(k))
            raise ValidationError(
                f"report {name!r} is not comparable with {named[0][0]!r}: configs differ in {', '.join(diff)}"
            )
    _write(render_comparison(named, "json" if args.format == "json" else "table"), args.out)
    return EXIT_OK


def cmd_synth(args):
    spec = FixtureSpec(
        height=args.height,
        width=args.width,
        class_count=args.classes,
        error_rate=args.error_rate,
        profile=args.profile,
        conf_value=args.conf,
        conf_range=args.conf_range,
        invalid_fraction=args.invalid_fraction,
        invalid_conf_range=args.invalid_conf_range,
        ignore_fraction=args.ignore_fraction,
    )
    for name in args.subsets:
        if name not in SUBSETS:
            raise FixtureSpecError(f"unknown subset {name!r}; choose from {', '.join(SUBSETS)}")
    suite = fixture_suite(spec, args.seed, args.subsets, args.images)
    path = export_suite(suite, args.out, emit=args.emit, patch=args.patch, masks=args.masks, logit_scale=args.logit_scale, seed=args.seed)
    log.info("wrote %s", path)
    return EXIT_OK


def build_parser():
    env_workers = int(os.environ.get("BRAVOEVAL_WORKERS", "1"))
    parser = argparse.ArgumentParser(prog="bravoeval", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--manifest", required=True, type=Path)
        p.add_argument("--out", type=Path, default=None, help=out_help)
        p.add_argument("--workers", type=_positive_int, default=env_workers)
        p.add_argument("--decoder", choices=("linear", "mask2former"), default=None, help="override the manifest's decoder kind")

    p = sub.add_parser("fuse", help="fuse decoder logits into class/confidence PNGs")
    common(p, "output directory")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="evaluate a manifest and write a report")
    common(p, "report file (default: stdout)")
    p.add_argument("--ece-bins", type=int, default=DEFAULT_ECE_BINS)
    p.add_argument("--degenerate-policy", choices=DEGENERATE_POLICIES, default="error")
    p.add_argument("--format", choices=("json", "table"), default="json")
    p.add_argument("--figures", type=Path, default=None, help="directory for reliability/ROC/PR figures")
    p.add_argument("--label", default=None, help="row label in table output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("summarize", help="rank JSON reports by BRAVO index")
    p.add_argument("reports", nargs="+", type=Path)
    p.add_argument("--format", choices=("json", "table"), default="table")
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("synth", help="write a synthetic fixture suite and manifest")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--subsets", nargs="+", default=list(SUBSETS))
    p.add_argument("--images", type=_positive_int, default=2, help="images per subset")
    p.add_argument("--height", type=_positive_int, default=64)
    p.add_argument("--width", type=_positive_int, default=64)
    p.add_argument("--classes", type=int, default=19)
    p.add_argument("--error-rate", type=float, default=0.3)
    p.add_argument("--profile", choices=("calibrated", "constant", "uniform"), default="calibrated")
    p.add_argument("--conf", type=float, default=0.8, help="confidence for the constant profile")
    p.add_argument("--conf-range", type=_range, default=(0.0, 1.0), metavar="LO,HI")
    p.add_argument("--invalid-fraction", type=float, default=0.1)
    p.add_argument("--invalid-conf-range", type=_range, default=None, metavar="LO,HI")
    p.add_argument("--ignore-fraction", type=float, default=0.0)
    p.add_argument("--emit", choices=("maps", "linear", "mask2former"), default="maps")
    p.add_argument("--patch", type=_positive_int, default=8, help="logit downsampling factor")
    p.add_argument("--masks", type=_positive_int, default=4)
    p.add_argument("--logit-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    logging.basicConfig(
        level=os.environ.get("BRAVOEVAL_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (SchemaError, ValidationError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (BravoError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_ITEM


if __name__ == "__main__":
    sys.exit(main())
