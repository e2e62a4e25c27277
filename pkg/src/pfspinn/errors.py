"""Exception types raised across the package."""


class PfSpinnError(Exception):
    """Base class for all package errors."""


class InvalidGridError(PfSpinnError, ValueError):
    pass


class ShapeMismatchError(PfSpinnError, ValueError):
    pass


class InvalidModelError(PfSpinnError, ValueError):
    pass


class SingularResolventError(PfSpinnError, ArithmeticError):
    """The resolvent multiplier vanishes at some Fourier mode."""

    def __init__(self, mode, value):
        self.mode = mode
        self.value = value
        super().__init__(f"singular resolvent at mode {mode}: |D| = {abs(value):.3e}")


class BlowUpError(PfSpinnError, ArithmeticError):
    """A time-stepping map produced non-finite values."""

    def __init__(self, message, step=None, stage=None):
        self.step = step
        self.stage = stage
        parts = [message]
        if step is not None:
            parts.append(f"step={step}")
        if stage is not None:
            parts.append(f"stage={stage}")
        super().__init__(" ".join(parts))


class UnsupportedDiagnosticError(PfSpinnError, TypeError):
    pass


class DomainError(PfSpinnError, ValueError):
    pass


class NonFiniteLossError(PfSpinnError, ArithmeticError):
    """Training hit a non-finite loss; carries the last finite parameters."""

    def __init__(self, iteration, last_params):
        self.iteration = iteration
        self.last_params = last_params
        super().__init__(f"non-finite loss at iteration {iteration}")


class DatasetFormatError(PfSpinnError, ValueError):
    code = "format"


class BadMagicError(DatasetFormatError):
    code = "bad-magic"


class TruncatedFileError(DatasetFormatError):
    code = "truncated"


class DimensionOverflowError(DatasetFormatError):
    code = "dimension-overflow"


class ModelSchemaError(PfSpinnError, ValueError):
    pass
