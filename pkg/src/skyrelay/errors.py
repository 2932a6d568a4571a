"""Exception types shared across the package."""


class SkyrelayError(Exception):
    pass


class ShapeError(SkyrelayError):
    """Operand shapes do not chain; message names both shapes."""


class ConfigError(SkyrelayError):
    """Invalid configuration value; message names the field."""


class DomainError(SkyrelayError):
    """Input outside an operation's domain (empty set, no UAVs, ...)."""


class ContractError(SkyrelayError):
    """Caller violated an API precondition."""


class BudgetExceededError(SkyrelayError):
    """Exact solver ran out of its node-expansion budget."""


class CheckpointError(SkyrelayError):
    """Checkpoint file missing, malformed, or incompatible."""


class TrainingAbort(SkyrelayError):
    """Training hit a non-recoverable numeric failure (NaN loss)."""
