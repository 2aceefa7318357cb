"""Exception types shared across the package."""


class ConeflowError(Exception):
    """Base class for structured errors raised by this package."""


class ParameterError(ConeflowError, ValueError):
    """A domain object violates one of its invariants."""


class QuadratureError(ConeflowError):
    """A quadrature did not reach the requested accuracy."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved error estimate {achieved:.3e})")
        self.achieved = achieved


class PositivityError(ConeflowError):
    """The Kahler condition (positive metric density) failed at a node."""

    def __init__(self, node: int, s: float, value: float):
        super().__init__(
            f"metric density non-positive at node {node} (s={s:.6g}): {value:.6e}"
        )
        self.node = node
        self.s = s
        self.value = value


class StepError(ConeflowError):
    """A time step could not be completed."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} at t={t:.12g}")
        self.t = t


class StationaryError(ConeflowError):
    """The stationary solve did not converge within its budget."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (final residual {residual:.3e})")
        self.residual = residual


class WindowError(ConeflowError, ValueError):
    """A diagnostic window is degenerate or touches the grid boundary."""


class ConfigError(ConeflowError, ValueError):
    """A configuration file could not be parsed or validated."""
