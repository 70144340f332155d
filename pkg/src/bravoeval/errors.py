"""Exception hierarchy shared by every bravoeval module."""


class BravoError(Exception):
    """Base class for all engine errors."""


class ValidationError(BravoError, ValueError):
    pass


class DimensionMismatchError(ValidationError):
    def __init__(self, name, expected, got):
        self.name = name
        self.expected = tuple(expected)
        self.got = tuple(got)
        super().__init__(
            f"dimension mismatch: {name} is {'x'.join(map(str, self.got))}, "
            f"expected {'x'.join(map(str, self.expected))}"
        )


class LabelRangeError(ValidationError):
    pass


class ScoreRangeError(ValidationError):
    pass


class NonFiniteError(ValidationError):
    pass


class ShapeMismatchError(ValidationError):
    pass


class UpsampleError(ValidationError):
    """Raised when a bilinear resize would shrink a tensor."""


class MetricError(BravoError):
    pass


class EmptyAccumulatorError(MetricError):
    pass


class DegenerateCurveError(MetricError):
    def __init__(self, message, metric=None):
        self.metric = metric
        super().__init__(f"{metric}: {message}" if metric else message)


class ConfigMismatchError(BravoError):
    pass


class HarmonicMeanError(MetricError):
    def __init__(self, metric, value):
        self.metric = metric
        self.value = value
        super().__init__(
            f"harmonic mean undefined: {metric} = {value!r} is not positive"
        )


class FormatError(BravoError):
    """Malformed file contents. ``path`` and ``offset`` locate the problem."""

    def __init__(self, message, path=None, offset=None):
        self.path = str(path) if path is not None else None
        self.offset = offset
        where = ""
        if self.path is not None:
            where = f"{self.path}"
            if offset is not None:
                where += f" @ byte {offset}"
            where += ": "
        super().__init__(where + message)


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class UnsupportedDtypeError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class BitDepthError(FormatError):
    pass


class ChannelCountError(FormatError):
    pass


class SchemaError(BravoError):
    def __init__(self, message, pointer="", path=None):
        self.pointer = pointer
        self.path = str(path) if path is not None else None
        prefix = f"{self.path}: " if self.path else ""
        super().__init__(f"{prefix}{pointer or '/'}: {message}")


class DuplicateIdError(SchemaError):
    pass


class FixtureSpecError(ValidationError):
    pass


class NonFiniteDataError(FormatError, NonFiniteError):
    pass
