"""Exception types raised across the package.

Every error carries a stable ``code`` used by the command line front end as a
machine-readable prefix on stderr.
"""


class SpectralSiameseError(Exception):
    code = "Error"


class ParseError(SpectralSiameseError):
    code = "ParseError"


class DegenerateFace(SpectralSiameseError):
    code = "DegenerateFace"


class IndexOutOfRange(SpectralSiameseError):
    code = "IndexOutOfRange"


class DisconnectedMesh(SpectralSiameseError):
    code = "DisconnectedMesh"


class ConvergenceFailure(SpectralSiameseError):
    code = "ConvergenceFailure"


class InsufficientVertices(SpectralSiameseError):
    code = "InsufficientVertices"


class ZeroEigenvalue(SpectralSiameseError):
    code = "ZeroEigenvalue"


class ZeroEigenvalueInRange(ZeroEigenvalue):
    code = "ZeroEigenvalueInRange"


class InvalidSchedule(SpectralSiameseError):
    code = "InvalidSchedule"


class TooFewSamples(SpectralSiameseError):
    code = "TooFewSamples"


class DimensionMismatch(SpectralSiameseError):
    code = "DimensionMismatch"


class KindMismatch(SpectralSiameseError):
    code = "KindMismatch"


class EmptyCorpus(SpectralSiameseError):
    code = "EmptyCorpus"


class DescriptorMissing(SpectralSiameseError):
    code = "DescriptorMissing"


class VertexCountMismatch(SpectralSiameseError):
    code = "VertexCountMismatch"


class MissingFile(SpectralSiameseError):
    code = "MissingFile"


class ManifestParseError(SpectralSiameseError):
    code = "ManifestParseError"


class EmptyTestSet(SpectralSiameseError):
    code = "EmptyTestSet"


class EmptySample(SpectralSiameseError):
    code = "EmptySample"


class FormatError(SpectralSiameseError):
    """A binary cache file has a bad magic, version or truncated payload."""

    code = "FormatError"


class ConfigError(SpectralSiameseError):
    code = "ConfigError"
