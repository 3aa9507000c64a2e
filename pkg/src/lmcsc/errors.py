"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible or invalid shapes."""


class FormatError(ValueError):
    """Malformed image file (message carries a byte offset)."""


class ManifestError(ValueError):
    """Invalid dataset manifest (message names the offending row)."""


class ConfigError(ValueError):
    """Invalid or unknown configuration key/value."""


class CheckpointError(ValueError):
    """Corrupt, truncated or version-mismatched checkpoint."""


class DegenerateOperatorError(ValueError):
    """Operator is identically zero; no spectral estimate exists."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""
