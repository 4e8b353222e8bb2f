"""Command-line entry point: ``dynsplat <command> [options]``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..core import InvalidInputError
from ..fit import DivergenceError, NonFiniteGradientError
from ..refine import UninpaintableError
from . import driver
from .config import ConfigError, config_help, dump_config, load_config

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2  # argparse
EXIT_MISSING_FILE = 3
EXIT_CONFIG = 4
EXIT_INVALID_INPUT = 5
EXIT_UNINPAINTABLE = 6
EXIT_DIVERGENCE = 7

EXIT_CODES_HELP = f"""exit codes:
  {EXIT_OK}  success
  {EXIT_INTERNAL}  unexpected internal error
  {EXIT_USAGE}  bad command-line usage
  {EXIT_MISSING_FILE}  missing input file or directory
  {EXIT_CONFIG}  configuration error (unknown key, bad value)
  {EXIT_INVALID_INPUT}  invalid input data (shapes, formats)
  {EXIT_UNINPAINTABLE}  refinement could not inpaint a frame
  {EXIT_DIVERGENCE}  fitting diverged (rising loss or non-finite gradient)
"""


def _add_config(p):
    p.add_argument("--config", type=Path, default=None, help="INI config file (defaults below)")


def build_parser() -> argparse.ArgumentParser:
    epilog = EXIT_CODES_HELP + "\n" + config_help()
    fmt = argparse.RawDescriptionHelpFormatter
    ap = argparse.ArgumentParser(prog="dynsplat", description="Dynamic Gaussian splatting pipeline.", epilog=epilog, formatter_class=fmt)
    sub = ap.add_subparsers(dest="command", required=True)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_, description=help_, epilog=epilog, formatter_class=fmt)
        _add_config(p)
        return p

    p = cmd("make-scene", "generate a synthetic scene: sequence PLYs, manifest and cameras.json")
    p.add_argument("--out", type=Path, required=True)

    p = cmd("render", "render a sequence from the four views to PNG frames")
    p.add_argument("--seq", type=Path, required=True, help="sequence directory")
    p.add_argument("--cameras", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--corrupt", action="store_true", help="apply [corruption] to the renders")
    p.add_argument("--enhance", action="store_true", help="apply the [pipeline] enhancer")

    p = cmd("fit", "fit every frame to multi-view PNG frames")
    p.add_argument("--views", type=Path, required=True)
    p.add_argument("--cameras", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--init-seq", type=Path, default=None, help="initial sequence (needed for init = truth)")

    p = cmd("refine", "run the uncertainty-guided refinement loop")
    p.add_argument("--seq", type=Path, required=True)
    p.add_argument("--refs", type=Path, required=True, help="reference PNG views")
    p.add_argument("--cameras", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--report", type=Path, default=None, help="per-iteration JSON lines (default OUT/refine_report.jsonl)")

    p = cmd("predict", "predict Gaussians per frame from four views with the predictor network")
    p.add_argument("--views", type=Path, required=True)
    p.add_argument("--cameras", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = cmd("metrics", "PSNR / MSE / SSIM between two PNG view directories")
    p.add_argument("--a", type=Path, required=True)
    p.add_argument("--b", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None, help="append the JSON record to this file")

    p = cmd("export", "write a sequence as Gaussian PLY files plus manifest")
    p.add_argument("--seq", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--precision", choices=("float", "double"), default=None)

    p = cmd("run", "full pipeline: scene, corrupted views, fit, refine, metrics")
    p.add_argument("--out", type=Path, required=True)

    p = cmd("show-config", "print the effective configuration")
    return ap


def _dispatch(args) -> int:
    cfg = load_config(args.config)
    c = args.command
    if c == "make-scene":
        driver.make_scene(cfg, args.out)
    elif c == "render":
        driver.render_views_to(cfg, args.seq, args.cameras, args.out, args.corrupt, args.enhance)
    elif c == "fit":
        driver.fit_to(cfg, args.views, args.cameras, args.out, args.init_seq)
    elif c == "refine":
        driver.refine_to(cfg, args.seq, args.refs, args.cameras, args.out, args.report)
    elif c == "predict":
        driver.predict_to(cfg, args.views, args.cameras, args.out)
    elif c == "metrics":
        print(json.dumps(driver.metrics_report(args.a, args.b, args.out)))
    elif c == "export":
        driver.export_to(cfg, args.seq, args.out, args.precision)
    elif c == "run":
        res = driver.run_pipeline(cfg, args.out, log=lambda s: print(s, file=sys.stderr))
        print(json.dumps(res))
    elif c == "show-config":
        print(dump_config(cfg))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except FileNotFoundError as e:
        code, kind, err = EXIT_MISSING_FILE, "missing file", e
    except ConfigError as e:
        code, kind, err = EXIT_CONFIG, "config error", e
    except UninpaintableError as e:
        code, kind, err = EXIT_UNINPAINTABLE, "un-inpaintable", e
    except (DivergenceError, NonFiniteGradientError) as e:
        code, kind, err = EXIT_DIVERGENCE, "divergence", e
    except InvalidInputError as e:
        code, kind, err = EXIT_INVALID_INPUT, "invalid input", e
    except Exception as e:  # noqa: BLE001 - last-resort categorization
        code, kind, err = EXIT_INTERNAL, f"internal error ({type(e).__name__})", e
    print(f"dynsplat {args.command}: {kind}: {err}", file=sys.stderr)
    return code

if __name__ == "__main__":
    sys.exit(main())
