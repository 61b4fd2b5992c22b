"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """A configuration value violates a documented constraint."""


class SelectionError(ValueError):
    """A token/frame selection request cannot be satisfied."""


class VocabularyError(IndexError):
    """A token id falls outside the embedding table."""


class IntegrityError(ValueError):
    """A selection plan does not match the sequence it is applied to."""


class ContractError(ValueError):
    """An operation precondition was violated."""


class GradCheckError(RuntimeError):
    """The function under gradient check produced a non-finite value."""


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss or gradients)."""
