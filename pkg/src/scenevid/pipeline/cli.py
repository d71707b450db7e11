"""``scenevid`` command line: one subcommand per pipeline stage plus ``demo``."""
from __future__ import annotations

import argparse
import json
import sys

from ..errors import ConfigError, ContractError, DependencyError, NumericError, SceneParseError
from .config import RunConfig
from .stages import ORDER, Run, RunLock

EXIT_OK, EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_NUMERIC = 0, 2, 3, 4

COMMANDS = {
    "render": ["render"],
    "train": ["models"],
    "customize": ["customize"],
    "keyframes": ["keyframes"],
    "interpolate": ["interpolate"],
    "evaluate": ["evaluate"],
    "demo": ORDER,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="scenevid", description="3D-guided toy video synthesis pipeline")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration document")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--stage-cache", choices=("on", "off"), default="on", help="skip stages whose outputs are current")
    common.add_argument("--scene", help="scene file (default: bundled demo)")
    common.add_argument("--frames", type=int, dest="n_frames", help="number of rendered frames")
    common.add_argument("--start-index", type=int, help="frame index of the first keyframe")
    common.add_argument("--spacing", type=int, dest="keyframe_spacing", help="keyframe spacing in frames")
    common.add_argument("--model-cache", help="directory shared by runs for trained toy models")
    common.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def resolve_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    return cfg.override(
        seed=args.seed,
        out=args.out,
        scene=args.scene,
        n_frames=args.n_frames,
        start_index=args.start_index,
        keyframe_spacing=args.keyframe_spacing,
    )


def run_command(command, cfg: RunConfig, stage_cache=True, cache_dir=None, log=None):
    """Execute ``command``'s stages in ``cfg.out`` under the directory lock; returns the run."""
    run = Run(cfg, stage_cache=stage_cache, cache_dir=cache_dir, log=log)
    with RunLock(cfg.out_dir):
        for stage in COMMANDS[command]:
            run.run_stage(stage)
    return run


def main(argv=None):
    args = build_parser().parse_args(argv)
    log = (lambda msg: None) if args.quiet else (lambda msg: print(msg, file=sys.stderr, flush=True))
    try:
        cfg = resolve_config(args)
        run = run_command(args.command, cfg, args.stage_cache == "on", args.model_cache, log)
    except DependencyError as e:
        print(f"dependency error: {e}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except SceneParseError as e:
        print(f"scene error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, ContractError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        where = f" (step {e.step})" if e.step is not None else ""
        print(f"numeric failure{where}: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    if args.command in ("evaluate", "demo"):
        print(json.dumps(json.loads((run.path("evaluate") / "report.json").read_text()), indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
