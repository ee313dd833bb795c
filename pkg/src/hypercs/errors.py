"""Exception types shared across the package."""


class HyperCSError(Exception):
    """Base class for input and data errors raised by hypercs."""


class FormatError(HyperCSError, ValueError):
    """A file does not follow the expected on-disk layout."""


class DimensionError(HyperCSError, ValueError):
    """Array shapes or indices are inconsistent with each other."""
