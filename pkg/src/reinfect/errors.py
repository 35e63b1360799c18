"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid law, scenario or solver parameters."""


class InvariantViolation(RuntimeError):
    """An internal model invariant was broken during a run."""


class SolverDivergence(RuntimeError):
    """The integral-equation solver drifted past its conservation ceiling."""


class HorizonTooShort(RuntimeError):
    """The force of infection has not decayed by the end of the horizon."""


class GridMismatch(ValueError):
    """Two trajectories are not sampled on the same time grid."""
