"""Exception types shared across the package.

The CLI maps these onto exit codes: ParameterError (and subclasses) exit 1,
FormatError and OS-level I/O failures exit 2.
"""


class ParameterError(ValueError):
    """An argument violates a documented precondition."""


class ShapeError(ParameterError):
    """An array argument has the wrong rank or extents."""


class FormatError(RuntimeError):
    """A serialized file is corrupt or has the wrong magic/layout."""
