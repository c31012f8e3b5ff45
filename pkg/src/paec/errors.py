"""Exception types raised across the package."""


class PAECError(Exception):
    """Base class for all package errors."""


class ParameterError(PAECError, ValueError):
    pass


class RateError(ParameterError):
    pass


class ShapeError(PAECError, ValueError):
    pass


class DegenerateEnergyError(PAECError, ValueError):
    """A signal that must carry energy is silent."""


class GeometryError(PAECError, ValueError):
    pass


class CorpusError(PAECError):
    pass


class ManifestParseError(PAECError, ValueError):
    def __init__(self, path, line_no, msg):
        super().__init__(f"{path}:{line_no}: {msg}")
        self.path = path
        self.line_no = line_no


class DurationError(PAECError, ValueError):
    pass


class ProviderError(PAECError):
    pass


class ConditioningError(PAECError, ValueError):
    """Speaker conditioning is required but missing."""


class TargetError(PAECError, ValueError):
    pass


class StrategyError(PAECError):
    pass


class ConfigError(PAECError, ValueError):
    pass
