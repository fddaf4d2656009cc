"""Exception hierarchy shared across the engine.

Library operations raise ``InputError`` for precondition violations and
``StructureError`` for internally inconsistent draft structures.  The
harness layers (config files, corpus files, CLI, service) raise
``ConfigError`` and ``DataError``, which the CLI maps to exit codes 2
and 3 respectively.
"""


class SpecdecError(Exception):
    """Base class for all errors raised by this package."""


class InputError(SpecdecError, ValueError):
    """An operation was called with invalid arguments."""


class StructureError(SpecdecError, ValueError):
    """A draft structure (tree, mask, positions) is internally inconsistent."""


class ConfigError(SpecdecError):
    """An experiment or service configuration is invalid."""


class DataError(SpecdecError):
    """A data file is unreadable or contains malformed records."""
