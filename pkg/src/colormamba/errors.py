"""Exception types shared across the package."""


class ColorMambaError(Exception):
    pass


class DimensionError(ColorMambaError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ColorMambaError, ValueError):
    """A layer or run was configured inconsistently."""


class DomainError(ColorMambaError, ValueError):
    """An argument lies outside the mathematical domain of the operation."""


class ContractError(ColorMambaError, RuntimeError):
    """A call violated an API precondition (e.g. backward on a non-scalar)."""


class NonFiniteError(ColorMambaError, FloatingPointError):
    """An operation produced NaN or Inf."""


class TrainingDiverged(ColorMambaError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
