import argparse
import json
import os
import sys

from . import __version__
from _utils import (
    parse_key_values,
    print_confirm,
    print_error,
    print_info,
    print_summary,
    print_warning,
    set_log_level,
)
from .errors import WorldblockError, WorldblockIOError
from .scene_spec import LAYOUT_PRESETS

COMMANDS = (
    "generate",
    "edit",
    "navmesh",
    "render-depth",
    "decompose",
    "eval-navmesh",
    "eval-parts",
    "synth",
)

# Inputs that must come from the command line or the config file.
REQUIRED_INPUTS = {
    "generate": ("spec",),
    "edit": ("blockout", "edits"),
    "navmesh": ("mesh",),
    "render-depth": ("blockout",),
    "decompose": ("mesh",),
    "eval-navmesh": (),
    "eval-parts": ("pred", "gt"),
    "synth": (),
}

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2

_METADATA_KEYS = {"worldblock_version", "command", "config_file"}


class _ArgumentParser(argparse.ArgumentParser):
    """Usage errors raise instead of exiting, so they map to exit code 1."""

    def error(self, message):
        raise ValueError(f"{self.prog}: {message}")


class ConfigLoader:
    def __init__(self, parser):
        self.parser = parser

    def load_config(self, config_file, current_args, provided_args=None):
        """
        Fill ``current_args`` from a JSON run config.

        Keys are argparse destinations of the current command. Destinations
        in ``provided_args`` were typed on the command line and keep their
        value; keys of other commands are skipped with a warning.

        Returns:
            The updated namespace.

        Raises:
            WorldblockIOError: ``config_file`` does not exist.
        """
        if not config_file or not os.path.isfile(config_file):
            raise WorldblockIOError(f"config file '{config_file}' does not exist")

        try:
            with open(config_file, "r", encoding="utf-8") as f:
                config_data = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"Config file '{config_file}' is not valid JSON: {e}") from e
        if not isinstance(config_data, dict):
            raise ValueError(f"Config file '{config_file}' must hold a JSON object")

        stamp = config_data.get("worldblock_version")
        if stamp is None:
            print_warning(f"'{config_file}' carries no worldblock_version stamp (running {__version__}).")
        elif stamp != __version__:
            print_warning(
                f"'{config_file}' was written by worldblock {stamp}, running {__version__}; "
                "options may have been renamed or added since."
            )

        config_command = config_data.get("command")
        if config_command is not None and config_command != current_args.command:
            print_warning(
                f"Config file was written for '{config_command}', "
                f"applying its shared options to '{current_args.command}'."
            )

        provided_args = set(provided_args or ())
        valid = command_option_names(self.parser, current_args.command)
        for key, value in config_data.items():
            # 'cell-size' -> 'cell_size'
            dest_key = key.replace("-", "_")
            if dest_key in _METADATA_KEYS:
                continue
            if dest_key not in valid:
                print_warning(f"Ignoring config key '{key}': not an option of '{current_args.command}'")
                continue
            if dest_key not in provided_args:
                if dest_key == "partition_params" and value is not None:
                    value = parse_key_values(value)
                setattr(current_args, dest_key, value)

        print_confirm(f"Loaded configuration from '{config_file}'")
        return current_args


def _add_common_options(parser):
    run_group = parser.add_argument_group("Run Options")
    log_group = parser.add_argument_group("Logging & Debugging")

    run_group.add_argument(
        "-s",
        "--seed",
        type=int,
        metavar="SEED",
        help="Seed for every stochastic choice (overrides the scene spec seed).",
    )
    run_group.add_argument(
        "-o",
        "--out",
        type=str,
        metavar="DIR",
        help="Output directory. Created if missing.",
    )
    run_group.add_argument(
        "-cf",
        "--config-file",
        "--config",
        dest="config_file",
        type=str,
        metavar="PATH",
        help="JSON configuration file; command-line flags take precedence.",
    )
    run_group.add_argument(
        "-j",
        "--jobs",
        type=int,
        default=1,
        metavar="N",
        help="Worker processes for batch commands. (default: 1)",
    )
    log_group.add_argument(
        "-ll",
        "--log-level",
        type=str,
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Set the logging level for console output.",
    )
    log_group.add_argument(
        "-d",
        "--debug",
        "--verbose",
        dest="debug",
        action="store_true",
        help="Enable debug/verbose output (shorthand for --log-level DEBUG).",
    )
    log_group.add_argument(
        "-tb",
        "--traceback",
        action="store_true",
        help="Show full traceback on error.",
    )


def _add_agent_options(group):
    group.add_argument("-ar", "--agent-radius", type=float, metavar="M", help="Agent radius. (default: 0.4)")
    group.add_argument("-ah", "--agent-height", type=float, metavar="M", help="Agent height. (default: 1.8)")
    group.add_argument("-mc", "--max-climb", type=float, metavar="M", help="Largest walkable step. (default: 0.4)")
    group.add_argument("-ms", "--max-slope", type=float, metavar="DEG", help="Steepest walkable slope. (default: 45)")


def _add_cell_options(group):
    group.add_argument("-cs", "--cell-size", type=float, metavar="M", help="Navmesh voxel size. (default: extent/256)")
    group.add_argument("-ch", "--cell-height", type=float, metavar="M", help="Navmesh voxel height. (default: 0.2)")


def build_argument_parser():
    parser = _ArgumentParser(
        prog="worldblock",
        description="Procedural world blockouts, navmeshes, depth maps and geometric evaluation.",
        formatter_class=argparse.RawTextHelpFormatter,
    )
    parser.add_argument(
        "-v",
        "--version",
        action="version",
        version=f"worldblock {__version__}",
        help="Show the version number and exit.",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    # generate
    p = subparsers.add_parser("generate", help="Scene spec -> blockout, navmesh, depth map and manifest.")
    g = p.add_argument_group("Generation Options")
    g.add_argument("-sp", "--spec", type=str, metavar="PATH", help="Scene spec JSON file.")
    g.add_argument(
        "-l",
        "--layout",
        choices=sorted(LAYOUT_PRESETS),
        help="Layout word overriding the scene spec's partition strategy.",
    )
    g.add_argument(
        "-pp",
        "--partition-params",
        type=parse_key_values,
        metavar="PARAMS",
        help="Partition strategy parameters merged over the scene spec, e.g. 'coverage=0.5,grid=64'.",
    )
    _add_common_options(p)

    # edit
    p = subparsers.add_parser("edit", help="Apply an edit script to a blockout and re-bake its navmesh.")
    g = p.add_argument_group("Edit Options")
    g.add_argument("-b", "--blockout", type=str, metavar="PATH", help="blockout.json from 'generate'.")
    g.add_argument("-e", "--edits", type=str, metavar="PATH", help="Edit script JSON file.")
    g.add_argument("-sp", "--spec", type=str, metavar="PATH", help="Scene spec supplying agent and navmesh settings.")
    _add_agent_options(g)
    _add_cell_options(g)
    _add_common_options(p)

    # navmesh
    p = subparsers.add_parser("navmesh", help="Bake a navmesh from any mesh file.")
    g = p.add_argument_group("Navmesh Options")
    g.add_argument("-m", "--mesh", type=str, metavar="PATH", help="Input mesh (OBJ, glTF, GLB, ...).")
    _add_agent_options(g)
    _add_cell_options(g)
    g.add_argument(
        "-mrf",
        "--min-region-fraction",
        type=float,
        default=0.05,
        metavar="FRACTION",
        help="Drop regions smaller than this share of the walkable area. (default: 0.05)",
    )
    g.add_argument("-lo", "--largest-only", action="store_true", help="Keep only the largest connected region.")
    _add_common_options(p)

    # render-depth
    p = subparsers.add_parser("render-depth", help="Render the conditioning depth map of a blockout.")
    g = p.add_argument_group("Render Options")
    g.add_argument("-b", "--blockout", type=str, metavar="PATH", help="blockout.json or a labeled mesh file.")
    g.add_argument(
        "-az",
        "--azimuth",
        type=str,
        default="45",
        metavar="DEG",
        help="Camera azimuth in degrees, or 'auto' for the least occluded canonical view. (default: 45)",
    )
    g.add_argument("-r", "--resolution", type=int, default=512, metavar="PX", help="Square image size. (default: 512)")
    g.add_argument(
        "-sr",
        "--sigma-rel",
        type=float,
        default=0.02,
        metavar="SIGMA",
        help="Relative depth noise on non-terrain pixels. (default: 0.02)",
    )
    _add_common_options(p)

    # decompose
    p = subparsers.add_parser("decompose", help="Split a scene mesh into ground and object parts.")
    g = p.add_argument_group("Decomposition Options")
    g.add_argument("-m", "--mesh", type=str, metavar="PATH", help="Input scene mesh.")
    g.add_argument("-we", "--weld-eps", type=float, metavar="M", help="Vertex weld tolerance. (default: 1e-4 x diagonal)")
    g.add_argument(
        "-st",
        "--small-threshold",
        type=float,
        metavar="COUNT",
        help="Parts with fewer vertices are merged into a neighbour. (default: 0.5%% of vertices)",
    )
    g.add_argument("-pv", "--pivots", type=int, metavar="K", help="Also report the top-K pivot / remainder split.")
    _add_common_options(p)

    # eval-navmesh
    p = subparsers.add_parser("eval-navmesh", help="Navmesh Chamfer distance report (CSV + JSON).")
    g = p.add_argument_group("Evaluation Options")
    g.add_argument("-p", "--pred", type=str, metavar="PATH", help="Predicted scene mesh.")
    g.add_argument("-g", "--gt", type=str, metavar="PATH", help="Ground-truth navmesh (OBJ or navmesh JSON).")
    g.add_argument("-ds", "--dataset", type=str, metavar="DIR", help="Benchmark directory from 'synth'.")
    g.add_argument("-pd", "--pred-dir", type=str, metavar="DIR", help="Predictions named <scene>.obj for --dataset.")
    g.add_argument("-n", "--samples", type=int, default=20000, metavar="N", help="Points per navmesh. (default: 20000)")
    g.add_argument("-mt", "--method", type=str, default="worldblock", metavar="NAME", help="Method name in the report.")
    _add_agent_options(g)
    _add_common_options(p)

    # eval-parts
    p = subparsers.add_parser("eval-parts", help="Part matching CD and F-scores (CSV + JSON).")
    g = p.add_argument_group("Evaluation Options")
    g.add_argument("-p", "--pred", type=str, metavar="PATH", help="Predicted parts (labeled mesh).")
    g.add_argument("-g", "--gt", type=str, metavar="PATH", help="Ground-truth parts (labeled mesh).")
    g.add_argument("-n", "--samples", type=int, default=4096, metavar="N", help="Points per part. (default: 4096)")
    g.add_argument(
        "-t",
        "--taus",
        type=float,
        nargs="+",
        default=[0.01, 0.02, 0.03, 0.05],
        metavar="TAU",
        help="F-score thresholds in normalized units. (default: 0.01 0.02 0.03 0.05)",
    )
    g.add_argument("-mt", "--method", type=str, default="worldblock", metavar="NAME", help="Method name in the report.")
    g.add_argument("-dc", "--decompose", action="store_true", help="Decompose the prediction instead of using its labels.")
    _add_common_options(p)

    # synth
    p = subparsers.add_parser("synth", help="Emit the navmesh benchmark or a grid-scene dataset.")
    g = p.add_argument_group("Dataset Options")
    g.add_argument("-md", "--mode", choices=["benchmark", "grid"], default="benchmark", help="Dataset family. (default: benchmark)")
    g.add_argument("-sp", "--spec", type=str, metavar="PATH", help="Scene spec template for benchmark scenes.")
    g.add_argument("-n", "--scenes", type=int, default=50, metavar="N", help="Number of scenes. (default: 50)")
    g.add_argument("-omin", "--objects-min", type=int, default=10, metavar="N", help="Fewest objects per scene. (default: 10)")
    g.add_argument("-omax", "--objects-max", type=int, default=30, metavar="N", help="Most objects per scene. (default: 30)")
    g.add_argument("-gr", "--grid", choices=["2x2", "3x3"], default="2x2", help="Grid size for grid scenes. (default: 2x2)")
    g.add_argument("-spc", "--spacing", type=float, default=1.0, metavar="M", help="Gap between grid objects. (default: 1.0)")
    g.add_argument("-dg", "--degrade", action="store_true", help="Also write degraded copies of grid objects.")
    _add_common_options(p)

    return parser


def command_parser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            if command not in action.choices:
                raise ValueError(f"Unknown command '{command}'. Choose from: {', '.join(COMMANDS)}")
            return action.choices[command]
    raise ValueError("parser has no subcommands")


def command_option_names(parser, command):
    return {
        action.dest
        for action in command_parser(parser, command)._actions
        if action.dest not in {"help", "version"}
    }


def _provided_argument_names(parser, argv):
    provided_args = set()
    command = next((arg for arg in argv if arg in COMMANDS), None)
    actions = list(parser._actions)
    if command is not None:
        actions += command_parser(parser, command)._actions
    for arg in argv:
        if not arg.startswith("-"):
            continue
        option = arg.split("=", 1)[0]
        for action in actions:
            if option in action.option_strings:
                provided_args.add(action.dest)
                break
    return provided_args


def finalize_args(args):
    """Check required inputs and apply the log level."""
    # --debug / --verbose overrides --log-level
    if args.debug:
        args.log_level = "DEBUG"
    set_log_level(args.log_level, args.traceback)

    for dest in REQUIRED_INPUTS[args.command]:
        if getattr(args, dest, None) is None:
            flag = "--" + dest.replace("_", "-")
            raise ValueError(f"'{args.command}' needs {flag} (on the command line or in the config file)")
    if not args.out:
        raise ValueError(f"'{args.command}' needs an output directory (-o/--out)")
    if args.jobs < 1:
        raise ValueError(f"--jobs must be >= 1, got {args.jobs}")
    return args


def parse_run_args(argv):
    parser = build_argument_parser()
    args = parser.parse_args(argv)
    provided_args = _provided_argument_names(parser, argv)
    if args.config_file:
        args = ConfigLoader(parser).load_config(
            args.config_file, args, provided_args=provided_args
        )
    return finalize_args(args)


def main(argv=None):
    argv = list(argv) if argv is not None else sys.argv[1:]
    command = next((arg for arg in argv if arg in COMMANDS), None)
    try:
        args = parse_run_args(argv)
        print_info(f"worldblock {__version__}: {args.command}")

        from .generator import WorldGenerator

        summary = WorldGenerator(args).run()
    except (WorldblockIOError, OSError) as e:
        print_error(str(e))
        print_summary({"command": command, "ok": False, "exit_code": EXIT_IO, "error": str(e)})
        return EXIT_IO
    except (WorldblockError, ValueError) as e:
        print_error(str(e))
        print_summary({"command": command, "ok": False, "exit_code": EXIT_VALIDATION, "error": str(e)})
        return EXIT_VALIDATION

    print_summary({"ok": True, "exit_code": EXIT_OK, **summary})
    return EXIT_OK
