"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shapes of interacting arrays disagree."""


class NumericError(ArithmeticError):
    """A computation produced or received non-finite values."""


class LabelError(ValueError):
    """A class label falls outside [0, num_classes)."""


class FeatureFileError(ValueError):
    """A feature file is malformed. Carries the 1-based offending line."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ConfigError(ValueError):
    """Unknown key, bad value, or missing file in a run configuration."""


class AggregationError(RuntimeError):
    """Every federated round was skipped; no aggregation ever succeeded."""
