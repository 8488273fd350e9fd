"""Exception taxonomy shared across the package."""


class DefectNasError(Exception):
    """Base class for all package errors."""


class ConfigError(DefectNasError, ValueError):
    """Invalid configuration value, file, or digest mismatch."""


class ScheduleError(ConfigError):
    """Invalid pruning schedule or schedule/state mismatch."""


class ShapeError(DefectNasError, ValueError):
    """Tensor shape violates an operation contract."""


class GenotypeError(DefectNasError, ValueError):
    """Malformed discrete architecture description."""


class GenotypeParseError(GenotypeError):
    """Genotype document failed to parse."""


class DataError(DefectNasError, ValueError):
    """Dataset layout or content problem."""


class StateError(DefectNasError, RuntimeError):
    """Search state does not admit the requested operation."""


class AccountingError(DefectNasError, RuntimeError):
    """Complexity counter met a layer it cannot account for."""


class SearchDivergedError(DefectNasError, RuntimeError):
    """Non-finite loss encountered during search or training."""
