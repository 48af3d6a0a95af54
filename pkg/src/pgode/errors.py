"""Exception taxonomy shared by all subpackages."""


class PgodeError(Exception):
    """Base class for everything raised on purpose by this package."""


class ConfigurationError(PgodeError):
    """Invalid user-supplied configuration, spec, or argument."""


class ShapeError(PgodeError):
    """Array shapes incompatible with the requested primitive."""


class NumericError(PgodeError):
    """Non-finite values or domain errors encountered during computation."""


class SimulationError(PgodeError):
    """Physics rollout left the finite regime; carries the failing step."""

    def __init__(self, message: str, step: int = -1):
        super().__init__(message)
        self.step = step
