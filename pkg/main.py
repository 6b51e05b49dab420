import argparse
import os
import sys
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from numerics.tensor import NumericFailure
from tasks import (
    MissingArtifactError,
    run_all,
    run_detect,
    run_evaluate,
    run_extract_maps,
    run_simulate,
    run_stats,
    run_sweep,
    run_train_m1,
    run_train_m2,
    run_train_m3,
)
from utils.config import AUTO, Config, ConfigError
from utils.progress import ProgressTracker

EXIT_CONFIG = 2
EXIT_MISSING_ARTIFACT = 3
EXIT_NUMERIC = 4

STAGES = {
    "simulate": run_simulate,
    "train-m1": run_train_m1,
    "extract-maps": run_extract_maps,
    "train-m2": run_train_m2,
    "stats": run_stats,
    "train-m3": run_train_m3,
    "detect": run_detect,
    "evaluate": run_evaluate,
    "run-all": run_all,
    "sweep": run_sweep,
}

# argparse dest -> dotted config key
FLAG_KEYS = {
    "workdir": "paths.workdir",
    "video_dir": "paths.video_dir",
    "annotations": "paths.annotations",
    "seed": "seed",
    "downscale": "downscale",
    "train_frames": "train_frames",
    "m1_iterations": "m1.iterations",
    "m1_channel": "m1.channel",
    "m2_iterations": "m2.iterations",
    "m2_window": "m2.window",
    "k": "m3.k",
    "frames": "m3.frames",
    "train_start": "m3.train_start",
    "m3_iterations": "m3.iterations",
    "stride": "m3.stride",
    "workers": "m3.workers",
    "sweep_workers": "sweep.workers",
    "k_values": "sweep.k_values",
    "frame_values": "sweep.frame_values",
}


def _int_or_auto(value: str):
    return value if value == AUTO else int(value)


def _int_list(value: str) -> List[int]:
    return [int(v) for v in value.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Cell event miner: learn event lengths without labels, then detect mitoses",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python main.py run-all                     # Simulate a scene and run every stage
  python main.py stats --quiet               # Event-length statistics and k recommendation
  python main.py train-m3 --k 8 --frames 14  # Explicit sequence length and frame budget
  python main.py sweep --sweep-workers 4     # k x frames comparison table
        """
    )
    common = argparse.ArgumentParser(add_help=False)
    vg = common.add_mutually_exclusive_group()
    vg.add_argument("--verbose", action="store_true", help="Enable detailed progress output (default)")
    vg.add_argument("--quiet", action="store_true", help="Suppress all progress output")
    common.add_argument("--config", default=None,
                        help="Path to configuration file (default: $CELL_EVENTS_CONFIG or config.yaml)")
    common.add_argument("--validate-only", action="store_true", help="Only validate configuration and exit")
    common.add_argument("--workdir", help="Directory holding all stage artifacts")
    common.add_argument("--video-dir", help="Directory of frame_%%05d.pgm files")
    common.add_argument("--annotations", help="Mitosis annotation CSV (frame,row,col)")
    common.add_argument("--seed", type=int)
    common.add_argument("--downscale", type=int)
    common.add_argument("--train-frames", type=int, help="Train on frames [0, N), test on [N, T)")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="Generate a synthetic cell video with ground truth")
    p = sub.add_parser("train-m1", parents=[common], help="Train the normal-cell mapper")
    p.add_argument("--m1-iterations", type=int)
    p.add_argument("--m1-channel", type=_int_or_auto, help="Feature map index or 'auto'")
    p = sub.add_parser("extract-maps", parents=[common], help="Write the normal-cell map volume")
    p.add_argument("--workers", type=int)
    p = sub.add_parser("train-m2", parents=[common], help="Train the event predictor on artificial events")
    p.add_argument("--m2-iterations", type=int)
    p.add_argument("--m2-window", type=int)
    sub.add_parser("stats", parents=[common], help="Event-length statistics and sequence-length recommendation")
    p = sub.add_parser("train-m3", parents=[common], help="Train the mitosis detector")
    p.add_argument("--k", type=_int_or_auto, help="Sequence length or 'auto'")
    p.add_argument("--frames", type=_int_or_auto, help="Annotated training frames or 'auto'")
    p.add_argument("--train-start", type=int, help="First M3 training frame (default: end of training range)")
    p.add_argument("--m3-iterations", type=int)
    p = sub.add_parser("detect", parents=[common], help="Detect mitoses in the test frames")
    p.add_argument("--stride", type=int)
    p.add_argument("--workers", type=int)
    sub.add_parser("evaluate", parents=[common], help="Precision, recall and F1 at both temporal tolerances")
    p = sub.add_parser("run-all", parents=[common], help="Chain every stage")
    p.add_argument("--k", type=_int_or_auto)
    p.add_argument("--frames", type=_int_or_auto)
    p.add_argument("--workers", type=int)
    p = sub.add_parser("sweep", parents=[common], help="Re-run M3 over a grid of (k, frames)")
    p.add_argument("--k-values", type=_int_list, help="Comma-separated sequence lengths")
    p.add_argument("--frame-values", type=_int_list, help="Comma-separated frame budgets")
    p.add_argument("--sweep-workers", type=int, help="Grid cells run in this many processes")
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    values = vars(args)
    return {key: values[dest] for dest, key in FLAG_KEYS.items() if values.get(dest) is not None}


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    progress = ProgressTracker(verbose=not args.quiet)
    config_path = args.config or os.getenv("CELL_EVENTS_CONFIG") or "config.yaml"

    try:
        progress.step("Loading configuration", f"Reading from {config_path}")
        config = Config(config_path, overrides=overrides_from_args(args))
        if args.validate_only:
            progress.success("Configuration is valid")
            return 0
        STAGES[args.command](config, progress)
    except ConfigError as e:
        progress.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except MissingArtifactError as e:
        progress.error(f"Missing artifact for stage '{e.stage}': {e}")
        return EXIT_MISSING_ARTIFACT
    except NumericFailure as e:
        progress.error(f"Numeric failure at iteration {e.iteration}: {e}")
        return EXIT_NUMERIC
    except KeyboardInterrupt:
        progress.error("Operation cancelled by user")
        return 1
    except Exception as e:
        progress.error(f"{type(e).__name__}: {e}")
        return 1
    progress.success("Done")
    return 0


if __name__ == "__main__":
    sys.exit(main())
