"""Exception hierarchy shared across the package."""


class LDGenError(Exception):
    """Base class for all package errors."""


class DimensionError(LDGenError, ValueError):
    pass


class DegenerateMaskError(LDGenError, ValueError):
    """Raised when a mask leaves nothing to attend to or average over."""


class RankError(LDGenError, ValueError):
    pass


class EvaluationError(LDGenError, ArithmeticError):
    pass


class UninitializedGradientError(LDGenError, RuntimeError):
    pass


class DegenerateStatisticsError(LDGenError, ValueError):
    pass


class SpaceTagError(LDGenError, ValueError):
    """A feature sequence carries the wrong source-space tag."""


class ConfigError(LDGenError, ValueError):
    pass


class FormatError(LDGenError, ValueError):
    """A binary file is malformed, truncated or corrupted."""


class VersionError(FormatError):
    pass


class DigestError(FormatError):
    pass


class SchemaError(LDGenError, ValueError):
    pass


class CorpusParseError(LDGenError, ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DataError(LDGenError, ValueError):
    pass


class DivergenceError(LDGenError, RuntimeError):
    """Training produced a non-finite loss.

    ``checkpoint`` holds the last parameters that produced a finite loss.
    """

    def __init__(self, message: str, checkpoint=None, step: int | None = None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.step = step


class ConfigDriftWarning(UserWarning):
    pass


class CaptionLintWarning(UserWarning):
    pass


__all__ = [
    "LDGenError",
    "DimensionError",
    "DegenerateMaskError",
    "RankError",
    "EvaluationError",
    "UninitializedGradientError",
    "DegenerateStatisticsError",
    "SpaceTagError",
    "ConfigError",
    "FormatError",
    "VersionError",
    "DigestError",
    "SchemaError",
    "CorpusParseError",
    "DataError",
    "DivergenceError",
    "ConfigDriftWarning",
    "CaptionLintWarning",
]
