import argparse
import logging
import sys

from app import STAGES, TerrainPipelineApp
from utils.config import ExperimentConfig

logger = logging.getLogger("terrain_sense")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAULT = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def _seed_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", "-c", help="Experiment INI file (defaults apply to missing keys).")
    common.add_argument("--output-dir", "-o", help="Root directory for stage outputs.")
    common.add_argument("--jobs", "-j", type=_positive_int, help="Maximum worker threads within a stage.")
    common.add_argument("--seeds", type=_seed_list, help="Comma-separated seeds, e.g. 0,1,2.")
    common.add_argument("--variants", help="Comma-separated policy variants (no-se, passive-se, active-se).")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="Override one config value; may be repeated.")
    common.add_argument("--force", action="store_true", help="Recompute outputs even if a manifest exists.")
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging.")

    parser = _Parser(prog="terrain-sense", description="Active terrain sensing pipeline, stage by stage.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for cls in STAGES:
        sub.add_parser(cls.name, parents=[common], help=cls.description, description=cls.description)
    sub.add_parser("run-all", parents=[common], help="Run every stage in order, reusing complete outputs.",
                   description="Run every stage in order, reusing complete outputs.")
    return parser


def setup_logging(verbose=False):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", datefmt="%H:%M:%S")


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    setup_logging(args.verbose)

    variants = [v.strip() for v in args.variants.split(",") if v.strip()] if args.variants else None
    try:
        config = ExperimentConfig.load(args.config, args.overrides, args.output_dir, args.jobs, args.seeds, variants)
    except FileNotFoundError as e:
        print(f"terrain-sense: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        print(f"terrain-sense: invalid configuration: {e}", file=sys.stderr)
        return EXIT_USAGE

    try:
        app = TerrainPipelineApp(config, force=args.force)
        if args.command == "run-all":
            app.run_all()
        else:
            app.run(args.command)
    except KeyboardInterrupt:
        logger.warning("[CLI] Interrupted.")
        return EXIT_FAULT
    except Exception as e:
        logger.debug("[CLI] Failure details", exc_info=True)
        print(f"terrain-sense: {args.command} failed: {e}", file=sys.stderr)
        return EXIT_FAULT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
