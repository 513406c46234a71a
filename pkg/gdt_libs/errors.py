# gdt_libs/errors.py


class GDTError(Exception):
    """Base class for every error raised by gdt_libs."""


class DimensionError(GDTError, ValueError):
    pass


class ContractError(GDTError, ValueError):
    pass


class InvalidMaskError(ContractError):
    pass


class ConfigError(GDTError):
    pass


class CapacityError(GDTError):
    pass


class LoadError(GDTError):
    pass


class UndefinedMetricError(GDTError):
    pass


class UsageError(GDTError):
    pass


class TrainingDivergedError(GDTError):
    pass
