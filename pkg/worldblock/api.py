"""Public Python API: run any worldblock command in process."""

from collections.abc import Mapping
from os import PathLike
from typing import Any

from _utils import parse_key_values

from .cli import (
    COMMANDS,
    ConfigLoader,
    build_argument_parser,
    command_option_names,
    finalize_args,
)


def build_run_args(
    command: str,
    *,
    config_file: str | PathLike[str] | None = None,
    options: Mapping[str, Any] | None = None,
    **overrides: Any,
):
    """Build command arguments from defaults, JSON config, and inline options.

    Precedence is: keyword overrides, ``options`` mapping, JSON config, defaults.
    Inline option names use the argparse destination names, such as
    ``spec``, ``out``, ``cell_size`` or ``agent_radius``.
    """
    if command not in COMMANDS:
        raise ValueError(f"Unknown command '{command}'. Choose from: {', '.join(COMMANDS)}")
    parser = build_argument_parser()
    args = parser.parse_args([command])

    inline_options = dict(options or {})
    inline_options.update(overrides)
    inline_options = {
        key.replace("-", "_"): value for key, value in inline_options.items()
    }

    if config_file is not None:
        config_file = str(config_file)
        args = ConfigLoader(parser).load_config(config_file, args)
    args.config_file = config_file

    valid_options = command_option_names(parser, command) - {"command", "config_file"}
    unknown_options = sorted(set(inline_options) - valid_options)
    if unknown_options:
        names = ", ".join(unknown_options)
        raise TypeError(f"Unknown option(s) for '{command}': {names}")

    for key, value in inline_options.items():
        if isinstance(value, PathLike):
            value = str(value)
        if key == "partition_params" and value is not None:
            value = parse_key_values(value)
        setattr(args, key, value)

    return finalize_args(args)


def run_command(
    command: str,
    *,
    config_file: str | PathLike[str] | None = None,
    options: Mapping[str, Any] | None = None,
    **overrides: Any,
) -> dict:
    """Run ``command`` and return its JSON summary as a dict.

    Args:
        command: One of ``generate``, ``edit``, ``navmesh``, ``render-depth``,
            ``decompose``, ``eval-navmesh``, ``eval-parts`` or ``synth``.
        config_file: Optional JSON configuration path.
        options: Optional mapping of inline options.
        **overrides: Inline options. These have highest precedence.
    """
    args = build_run_args(
        command,
        config_file=config_file,
        options=options,
        **overrides,
    )

    # Keep the orchestrator import lazy so callers can inspect/build options
    # without loading the mesh and rendering stack.
    from .generator import WorldGenerator

    return WorldGenerator(args).run()
