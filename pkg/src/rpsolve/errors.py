"""Exception hierarchy. Every error carries the CLI exit code it maps to."""


class RPSolveError(Exception):
    exit_code = 10


class ConfigError(RPSolveError, ValueError):
    exit_code = 2


class OffGrid(RPSolveError, ValueError):
    exit_code = 11


class NonGridShift(RPSolveError, ValueError):
    exit_code = 12


class WindowExceeded(RPSolveError, ValueError):
    exit_code = 13


class NonCommutative(RPSolveError):
    exit_code = 14


class NonCommutativeMixedSpectrum(NonCommutative):
    exit_code = 15


class NotHyperbolic(RPSolveError):
    exit_code = 16


class SignMismatch(RPSolveError, ValueError):
    exit_code = 17


class UnknownFamily(ConfigError):
    exit_code = 18


class BadRadii(ConfigError):
    exit_code = 19


class OrbitResidualTooLarge(RPSolveError):
    exit_code = 20


class MaxIterExceeded(RPSolveError):
    """Fixed-point iteration did not reach the tolerance.

    The partial iterate and the residual history are attached so callers can
    inspect what happened instead of receiving a spurious solution.
    """

    exit_code = 21

    def __init__(self, message, residuals=None, iterate=None, report=None):
        super().__init__(message)
        self.residuals = list(residuals or [])
        self.iterate = iterate
        self.report = report


class NotDissipative(RPSolveError):
    exit_code = 22


class NonFinite(RPSolveError, FloatingPointError):
    exit_code = 23

    def __init__(self, message, time=None, trajectory=None):
        super().__init__(message)
        self.time = time
        self.trajectory = trajectory


class VerificationFailed(RPSolveError):
    exit_code = 1
