"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration violates one of its invariants."""


class ShapeError(ValueError):
    """Tensor shapes are inconsistent with the declared contract."""


class IngestionError(ValueError):
    """A dataset directory does not follow the expected layout."""


class EvaluationError(RuntimeError):
    """Retrieval evaluation cannot produce metrics (e.g. no valid query)."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss term."""
