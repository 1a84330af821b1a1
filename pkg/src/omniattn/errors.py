"""Exception hierarchy for the engine."""


class EngineError(Exception):
    """Base class for all engine errors."""


class ShapeError(EngineError, ValueError):
    """Operand dimensions are inconsistent."""


class ParameterError(EngineError, ValueError):
    """A scalar argument or configuration value is out of range."""


class BoundsError(EngineError, IndexError):
    """A block or token index is outside the addressed buffer."""


class ConsistencyError(EngineError):
    """Data violates a structural contract (mask/symbol/counter mismatch)."""


class StateError(EngineError, RuntimeError):
    """An operation ran against missing or stale cached state."""
