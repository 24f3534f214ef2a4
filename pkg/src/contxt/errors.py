"""Exception hierarchy shared across the package."""


class ContxtError(Exception):
    """Base class for all package errors."""


class DimensionError(ContxtError, ValueError):
    pass


class EmptyContextSetError(ContxtError, ValueError):
    pass


class TapError(ContxtError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class DataError(ContxtError, ValueError):
    pass


class VocabError(DataError):
    pass


class ContextLengthError(ContxtError, ValueError):
    pass


class CacheMissError(ContxtError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class ConfigError(ContxtError, ValueError):
    pass


class CheckpointError(ContxtError, ValueError):
    pass
