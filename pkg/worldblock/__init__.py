__version__ = "0.1.0"

from .api import build_run_args, run_command

__all__ = [
    "__version__",
    "build_run_args",
    "run_command",
]
