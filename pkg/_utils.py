import json
import logging
import os
import sys
import tempfile
import traceback

# Message kinds: (prefix, logging level, rich style, ANSI color).
_STYLES = {
    "info": ("", logging.INFO, "green", "\033[92m"),
    "confirm": ("", logging.INFO, "magenta", "\033[95m"),
    "warning": ("[WARN] ", logging.WARNING, "yellow", "\033[93m"),
    "debug": ("[DEBG] ", logging.DEBUG, "blue", "\033[94m"),
    "error": ("[ERRO] ", logging.ERROR, "bold red", "\033[1;91m"),
}
_ANSI_RESET = "\033[0m"


class _StderrHandler(logging.Handler):
    """Writes each record to the current ``sys.stderr``."""

    def emit(self, record):
        try:
            sys.stderr.write(self.format(record) + "\n")
        except Exception:
            self.handleError(record)


# stdout carries only the JSON summary line of a command.
_logger = logging.getLogger("worldblock")
if not _logger.handlers:
    _handler = _StderrHandler()
    _handler.setFormatter(logging.Formatter("%(message)s"))
    _logger.addHandler(_handler)
    _logger.propagate = False
_logger.setLevel(logging.INFO)

_state = {"console": None, "traceback": False}


def set_rich_console(console):
    """Route log lines through ``console`` while a rich Live display owns the terminal."""
    _state["console"] = console


def clear_rich_console():
    _state["console"] = None


def set_log_level(level, show_traceback=False):
    """
    Sets the level shared by every print helper.

    Args:
        level (str or int): 'DEBUG', 'INFO', 'WARNING', 'ERROR' or a logging constant.
        show_traceback (bool): If True, print_error also prints the active traceback.
    """
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO
    _logger.setLevel(level)
    _state["traceback"] = bool(show_traceback)


def _emit(kind, message):
    prefix, level, style, ansi = _STYLES[kind]
    if not _logger.isEnabledFor(level):
        return
    text = f"{prefix}{message}"
    console = _state["console"]
    if console is not None:
        console.print(text, style=style, markup=False, highlight=False)
    elif sys.stderr.isatty():
        _logger.log(level, f"{ansi}{text}{_ANSI_RESET}")
    else:
        _logger.log(level, text)


def print_info(message):
    _emit("info", message)


def print_confirm(message):
    """Success line, shown in magenta."""
    _emit("confirm", message)


def print_warning(message):
    _emit("warning", message)


def print_debug(message):
    _emit("debug", message)


def print_error(message, exc_info=None):
    """
    Prints an error line, plus a traceback when requested.

    Args:
        message (str): The error message.
        exc_info (bool or BaseException, optional): An exception whose traceback
            is printed, or True for the exception being handled. ``-tb`` turns
            this on for every error.
    """
    _emit("error", message)
    if not (_state["traceback"] or exc_info):
        return
    if isinstance(exc_info, BaseException):
        lines = traceback.format_exception(type(exc_info), exc_info, exc_info.__traceback__)
        sys.stderr.write("".join(lines))
    else:
        traceback.print_exc(file=sys.stderr)

def print_summary(payload):
    """Write one machine-readable JSON line to stdout."""
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")
    sys.stdout.flush()


def dumps_stable(data):
    """Canonical JSON text: sorted keys, fixed indent, trailing newline."""
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def atomic_write_text(path, text):
    """Write ``text`` next to ``path`` and rename it into place.

    Readers never observe a partially written file.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(
        prefix=".tmp-", suffix=os.path.basename(path), dir=directory
    )
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def atomic_write_json(path, data):
    atomic_write_text(path, dumps_stable(data))


def parse_key_values(value, allowed=None):
    """
    Parse strategy parameters from string format to dictionary.

    Supported formats:
    - "coverage=0.45,grid=64" (comma-separated key=value pairs)
    - "coverage=0.45 grid=64" (space-separated key=value pairs)
    - Dictionary input (passes through)

    Values are converted to int when they look integral, to float when numeric,
    and left as strings otherwise.

    Args:
        value: String or dict of key=value pairs
        allowed: Optional iterable of accepted keys

    Returns:
        dict: Parsed key-value pairs

    Raises:
        ValueError: If format is invalid or unknown keys are used
    """
    if isinstance(value, dict):
        result = value
    else:
        result = {}
        separators = [",", " "]
        pairs = []

        for sep in separators:
            if sep in value:
                pairs = value.split(sep)
                break

        if not pairs:
            pairs = [value]

        for pair in pairs:
            pair = pair.strip()
            if not pair:
                continue

            if "=" not in pair:
                raise ValueError(
                    f"Invalid format: '{pair}'. Expected format: key=value (e.g., 'coverage=0.45,grid=64')"
                )

            key, val = pair.split("=", 1)
            key = key.strip()
            val = val.strip()
            result[key] = _coerce_scalar(val)

        if not result:
            raise ValueError(f"No valid key=value pairs found in: '{value}'")

    if allowed is not None:
        allowed = set(allowed)
        for key in result:
            if key not in allowed:
                raise ValueError(
                    f"Unknown key: '{key}'. Allowed keys: {', '.join(sorted(allowed))}"
                )
    return result


def _coerce_scalar(text):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text
