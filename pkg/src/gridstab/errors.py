"""Exception hierarchy.

Every error raised on purpose by the package derives from ``GridStabError`` so
the CLI can map it to an exit code. ``kind`` is a short machine-readable tag
used in the CLI's stderr prefix.
"""


class GridStabError(Exception):
    kind = "error"


class ConfigError(GridStabError):
    """Malformed or unreadable input file."""

    kind = "config"


class ValidationError(ConfigError):
    """Input parsed but violates a model invariant."""

    kind = "validation"


class NumericalError(GridStabError):
    kind = "numerical"


class PowerFlowDiverged(NumericalError):
    kind = "powerflow-diverged"

    def __init__(self, message, mismatch=float("nan"), iterations=0):
        super().__init__(message)
        self.mismatch = mismatch
        self.iterations = iterations


class SingularJacobian(NumericalError):
    kind = "singular-jacobian"

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class InfeasibleOperatingPoint(NumericalError):
    """A unit cannot be initialized at the requested terminal conditions."""

    kind = "infeasible-unit"


class InitializationError(NumericalError):
    """Assembled equilibrium does not satisfy f = 0, g = 0."""

    kind = "init-inconsistent"

    def __init__(self, message, worst=()):
        super().__init__(message)
        self.worst = tuple(worst)


class PreconditionError(NumericalError):
    kind = "precondition"


class DifferentiationError(NumericalError):
    """Jacobian disagrees with the independent finite-difference probe."""

    kind = "jacobian-probe"


class DAEIndexError(NumericalError):
    """Algebraic Jacobian is singular or too badly conditioned for reduction."""

    kind = "dae-index"


class EigenSolverError(NumericalError):
    kind = "eigensolver"


class StepFailure(NumericalError):
    """Implicit integrator could not solve a step."""

    kind = "step-failure"

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time
