"""Exception hierarchy shared by the library and the command-line tool.

Every error that should abort a run maps to a process exit code via the
``exit_code`` attribute: 2 for configuration problems, 3 for numerical
failures, 4 for statistics/calibration failures.  Plain bugs surface as
ordinary Python exceptions and exit 1.
"""


class FluorcorrError(Exception):
    """Base class for all anticipated failures."""

    exit_code = 1


class ConfigError(FluorcorrError):
    """Invalid or inconsistent run configuration."""

    exit_code = 2


class NumericalError(FluorcorrError):
    """A numerical routine could not produce a trustworthy result."""

    exit_code = 3


class DegenerateSteadyStateError(NumericalError):
    """The Lindblad generator has more than one stationary state."""

    def __init__(self, null_dim: int, message: str = ""):
        self.null_dim = null_dim
        if not message:
            message = (
                f"stationary subspace is {null_dim}-dimensional; the dynamics do "
                "not relax to a unique steady state (decoupled or dark manifold?)"
            )
        super().__init__(message)


class PhaseReferenceError(NumericalError):
    """The steady-state dipole vanishes, so no phase reference exists."""


class StatisticsError(FluorcorrError):
    """Not enough (or inconsistent) counts to complete an analysis step."""

    exit_code = 4


class CalibrationError(StatisticsError):
    """Phase calibration from measured asymptotes failed."""
