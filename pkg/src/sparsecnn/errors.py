"""Exception hierarchy. Every distinct failure mode has its own class so callers
(and the CLI) can report them separately."""


class SparseCNNError(Exception):
    pass


class ShapeError(SparseCNNError, ValueError):
    """Dimensions do not line up at a layer or transform boundary."""


class ManifestError(SparseCNNError, ValueError):
    pass


class MalformedManifestError(ManifestError):
    pass


class UnknownLayerError(ManifestError):
    pass


class ManifestDimensionError(ManifestError, ShapeError):
    pass


class FileFormatError(SparseCNNError, ValueError):
    pass


class BadMagicError(FileFormatError):
    pass


class UnsupportedVersionError(FileFormatError):
    pass


class TruncatedFileError(FileFormatError):
    pass


class DimensionOverflowError(FileFormatError):
    pass


class NonFiniteValueError(FileFormatError):
    pass


class AccumulatorOverflowError(SparseCNNError, OverflowError):
    pass
