"""Exception types shared across the package."""


class EntformerError(Exception):
    """Base class for all package errors."""


class ShapeError(EntformerError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ValidationError(EntformerError, ValueError):
    """Input data violates a documented precondition."""


class MaskedRowError(EntformerError, ValueError):
    """A softmax slice was entirely masked (-inf); a uniform fallback is forbidden."""


class DeterminismError(EntformerError, RuntimeError):
    """Two evaluations of a supposedly deterministic function disagreed."""


class CorpusError(EntformerError, ValueError):
    """A corpus file or document failed ingestion validation."""


class ConfigError(EntformerError, ValueError):
    """Configuration is invalid; ``problems`` lists every failure at once."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class CheckpointError(EntformerError, ValueError):
    """A checkpoint file is malformed or incompatible."""
