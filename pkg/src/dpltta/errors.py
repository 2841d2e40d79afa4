"""Exception types shared across the package."""


class ShapeMismatchError(ValueError):
    """Operands have incompatible shapes."""


class DegenerateInputError(ValueError):
    """Input is numerically degenerate (e.g. zero-norm vector for a cosine)."""


class ContractError(RuntimeError):
    """An API contract was violated (non-scalar loss, incompatible snapshot, ...)."""


class EmptyBatchError(RuntimeError):
    """No confident samples are available; the caller should skip the update."""


class ConfigError(ValueError):
    """Experiment configuration failed validation."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DataFormatError(ValueError):
    """A binary dataset/checkpoint file is malformed."""
