"""Typed errors raised by worldblock.

The CLI maps :class:`WorldblockIOError` (and any ``OSError``) to exit code 2
and every other :class:`WorldblockError` to exit code 1.
"""


class WorldblockError(Exception):
    """Base class for all worldblock errors."""


class SpecSyntaxError(WorldblockError, ValueError):
    """Scene spec text is not valid JSON."""


class SchemaError(WorldblockError, ValueError):
    """A document violates its schema. ``path`` names the offending key."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class OutOfBoundsError(WorldblockError, ValueError):
    pass


class BadParamsError(WorldblockError, ValueError):
    pass


class TierOrderError(WorldblockError, ValueError):
    pass


class NavigabilityImpossibleError(WorldblockError):
    pass


class UnknownIdError(WorldblockError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown id"


class DegenerateBoundsError(WorldblockError, ValueError):
    pass


class EmptyNavMeshError(WorldblockError):
    """Baking found no walkable surface."""


class ZeroAreaError(WorldblockError, ValueError):
    pass


class BadKError(WorldblockError, ValueError):
    pass


class EmptyMeshError(WorldblockError, ValueError):
    pass


class EmptyCloudError(WorldblockError, ValueError):
    pass


class DegenerateCloudError(WorldblockError, ValueError):
    pass


class EmptySetError(WorldblockError, ValueError):
    pass


class DimensionMismatchError(WorldblockError, ValueError):
    pass


class InsufficientAssetsError(WorldblockError, ValueError):
    pass


class WorldblockIOError(WorldblockError, OSError):
    pass
