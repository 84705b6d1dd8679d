"""Exception types raised by the solver stack."""


class GameError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(GameError, ValueError):
    pass


class NonFiniteError(GameError, ValueError):
    pass


class SingularLinearizationError(GameError):
    """Steering angle too close to the tan(phi) singularity to linearize."""


class DivergenceError(GameError):
    """A rollout produced non-finite states even at the smallest step size."""


class IllConditionedGameError(GameError):
    """The stacked Nash coupling matrix stayed singular after regularization."""

    def __init__(self, message, timestep=None):
        super().__init__(message)
        self.timestep = timestep


class RegularizationError(GameError):
    """A player's own control cost block is not positive definite."""


class ConfigError(GameError, ValueError):
    pass
