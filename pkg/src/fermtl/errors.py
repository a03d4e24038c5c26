"""Exception types shared across the package."""


class FermtlError(Exception):
    """Base class for package errors."""


class DimensionError(FermtlError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ConfigurationError(FermtlError, ValueError):
    """A configuration value is invalid or inconsistent."""


class ManifestError(FermtlError, ValueError):
    """A dataset directory or manifest file failed validation."""


class TrainingDiverged(FermtlError, RuntimeError):
    """Training produced a non-finite loss."""
