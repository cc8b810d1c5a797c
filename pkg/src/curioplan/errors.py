"""Exception types shared across the toolkit."""


class CurioplanError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(CurioplanError):
    """Invalid configuration value (bad particle count, sigma <= 0, unknown key, ...)."""


class ShapeError(CurioplanError):
    """Array dimensions do not match the declared architecture or contract."""


class TrainingDivergence(CurioplanError):
    """A particle produced a non-finite training loss."""

    def __init__(self, particle_index: int, message: str = ""):
        self.particle_index = particle_index
        super().__init__(message or f"non-finite loss for particle {particle_index}")


class RolloutDivergence(CurioplanError):
    """An imagined rollout produced a non-finite state."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite state at rollout step {step}")


class PlanningFailure(CurioplanError):
    """The objective returned non-finite values for an entire population."""


class SimulationError(CurioplanError):
    """The environment produced a non-finite state."""
