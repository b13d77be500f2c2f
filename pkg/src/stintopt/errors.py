"""Exception hierarchy shared across the toolkit."""


class StintOptError(Exception):
    """Base class for all toolkit errors."""


class TrackError(StintOptError):
    """Invalid track data or track-derived quantity (e.g. unbounded corner)."""


class ParamError(StintOptError):
    """Invalid vehicle parameter set or parameter file."""


class ConfigError(StintOptError):
    """Invalid run configuration."""


class StallError(StintOptError):
    """The simulated vehicle ran out of kinetic energy.

    Carries the position [m] at which the stall occurred.
    """

    def __init__(self, position: float, message: str | None = None):
        self.position = float(position)
        super().__init__(message or f"vehicle stalled at s = {position:.1f} m")


class BrakingInfeasibleError(StintOptError):
    """Required deceleration exceeds combined regen + mechanical braking.

    Carries the force shortfall [N] (positive) and the position [m].
    """

    def __init__(self, shortfall: float, position: float):
        self.shortfall = float(shortfall)
        self.position = float(position)
        super().__init__(
            f"infeasible braking at s = {position:.1f} m: "
            f"short {shortfall:.1f} N of deceleration capability"
        )


class InfeasibleProblemError(StintOptError):
    """The optimization problem is infeasible (or unbounded).

    ``family`` names the first violated constraint family when known, e.g.
    ``"terminal battery energy"`` or ``"battery thermal"``.
    """

    def __init__(self, family: str, message: str | None = None):
        self.family = family
        super().__init__(message or f"infeasible problem: {family}")
