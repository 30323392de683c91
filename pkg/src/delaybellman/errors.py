"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Matrix or grid shapes are inconsistent."""


class GridError(ValueError):
    """Step sizes or grids are not aligned as required."""


class DivergenceError(RuntimeError):
    """Integration produced non-finite values.

    ``time`` is the first time at which a non-finite state appeared.
    """

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


class UnstableError(RuntimeError):
    """An operation that needs an exponentially stable closed loop got one that is not."""
