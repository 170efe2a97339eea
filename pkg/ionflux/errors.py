"""Exception hierarchy shared by every ionflux module"""


class IonfluxError(Exception):
    """Base class for all toolkit errors"""
    exit_code = 1


class ConfigError(IonfluxError):
    """Configuration could not be parsed or validated"""
    exit_code = 2


class NonNeutralBoundary(ConfigError):
    pass


class ValenceMismatch(ConfigError):
    pass


class SolveError(IonfluxError):
    """A numerical construction or solve failed"""
    exit_code = 3


class PackingOverflow(SolveError):
    pass


class DegenerateLayer(SolveError):
    pass


class BracketFailure(SolveError):
    pass


class NoBracket(SolveError):
    pass


class NoYStar(SolveError):
    pass


class SigmaVanishes(SolveError):
    pass


class InvalidLimits(SolveError):
    pass


class InfeasibleState(SolveError):
    pass


class NoConvergence(SolveError):
    def __init__(self, message, residual_norm=None, iterate=None):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.iterate = iterate


class SingularJacobian(SolveError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class MeshTooCoarse(SolveError):
    pass


class IoError(IonfluxError):
    """Reading inputs or writing outputs failed"""
    exit_code = 4
