"""
main.py - Command-line entry point for the knowledge-sharing simulator
Subcommands: run <config.toml>, validate <config.toml>, inspect <checkpoint>
"""
import argparse
import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional

from config import EXPORT_CONFIG, SimConfig, configure_logging, dump_config, load_config
from tools.checkpoint import load_checkpoint, save_checkpoint
from tools.dispatcher import create_runner_dispatcher
from tools.exports import write_run_outputs
from tools.partitioning import build_federated_data
from utils.errors import CogShareError, ConfigError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def print_header(title: str):
    """Print the run header with timestamp"""
    print(title)
    print(f"Timestamp: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    print("=" * 80)


def print_summary(summary: Dict, written: Dict[str, Path]):
    print("\nRUN SUMMARY:")
    print("-" * 50)
    final = summary.get("final_global_accuracy")
    print(f"Runner: {summary['runner']}  Seed: {summary['seed']}")
    print(f"Rounds completed: {summary['rounds_completed']}")
    print(f"Final global accuracy: {'n/a' if final is None else f'{final:.4f}'}")
    print(f"Rounds to target ({summary['target_accuracy']}): {summary['rounds_to_target']}")
    if summary.get("honest_accuracy") is not None:
        print(f"Honest clients: {summary['honest_accuracy']:.4f}  "
              f"Unreliable clients: {summary['unreliable_accuracy']:.4f}")
    gate = summary.get("gate")
    if gate:
        print(f"Gate: {gate['learned']} learned, {gate['skipped']} skipped, "
              f"{gate['takeovers']} takeovers, {gate['rejected']} rejected uploads")
    print("\nFiles:")
    for path in written.values():
        print(f"   {path}")


class OutputLock:
    """Marker file guarding an output directory for the duration of one run"""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.path = out_dir / EXPORT_CONFIG["lock_file"]
        self.created_dir = False

    def __enter__(self) -> "OutputLock":
        self.created_dir = not self.out_dir.exists()
        self.out_dir.mkdir(parents=True, exist_ok=True)
        try:
            self.path.open("x").close()
        except FileExistsError:
            raise CogShareError(f"output directory {self.out_dir} is locked by another run") from None
        return self

    def __exit__(self, exc_type, exc, tb):
        self.path.unlink(missing_ok=True)
        if self.created_dir and not any(self.out_dir.iterdir()):
            self.out_dir.rmdir()
        return False


def run_experiment(cfg: SimConfig) -> int:
    """
    Execute the configured runner and write its outputs

    Data is prepared before the output directory is touched, so a bad dataset path leaves nothing
    behind. An aborted run still writes its partial metrics and exits with the runtime status.

    Returns:
        int: exit status (0 success, 2 runtime error or aborted run)
    """
    data = build_federated_data(cfg)
    out_dir = cfg.resolved_output_dir()
    dispatcher = create_runner_dispatcher()

    with OutputLock(out_dir):
        log = dispatcher.dispatch(cfg, data)
        written = write_run_outputs(log, out_dir, EXPORT_CONFIG)
        if log.final_state is not None:
            written["checkpoint"] = save_checkpoint(log.final_state, out_dir / EXPORT_CONFIG["checkpoint"])

    print_summary(log.summary, written)
    if log.aborted:
        print(f"error: run aborted: {log.error}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def inspect_checkpoint(path) -> int:
    server = load_checkpoint(path)
    table = server.table
    print_header(f"Checkpoint {path}")
    layers = " -> ".join(str(layer.in_dim) for layer in server.classifier.layers)
    print(f"Classifier: {layers} -> {server.classifier.output_dim}")
    print(f"Embedding dim: {table.dim}  Classes: {table.num_classes}")
    for c, entry in sorted(table.entries.items()):
        if entry.initialized:
            print(f"   class {c}: trace {entry.trace:.4f}, last winner client {entry.last_winner}")
        else:
            print(f"   class {c}: uninitialized")
    print(f"Gate log records: {len(server.gate_log)}  Rejected uploads: {sum(server.rejections.values())}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cogshare", description="Contrastive knowledge-sharing FL simulator")
    parser.add_argument("--log-level", default=None, help="override COGSHARE_LOG_LEVEL")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run an experiment from a TOML config")
    run.add_argument("config", type=Path)
    validate = commands.add_parser("validate", help="check a TOML config and print it with defaults filled in")
    validate.add_argument("config", type=Path)
    inspect = commands.add_parser("inspect", help="describe a server checkpoint")
    inspect.add_argument("checkpoint", type=Path)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main execution function - parses arguments and maps failures to exit codes
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        if args.command == "inspect":
            return inspect_checkpoint(args.checkpoint)
        cfg = load_config(args.config)
        if args.command == "validate":
            print(dump_config(cfg))
            return EXIT_OK
        print_header(f"Knowledge-sharing simulation: {args.config}")
        return run_experiment(cfg)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (CogShareError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
