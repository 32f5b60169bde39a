"""Exception hierarchy shared by every brwlab module."""


class BRWError(Exception):
    """Base class for all brwlab failures."""


class ConfigError(BRWError, ValueError):
    """Invalid user input (kernel, offspring law, config file)."""


class AsymmetricKernel(ConfigError):
    pass


class NegativeIntensity(ConfigError):
    pass


class ZeroSupport(ConfigError):
    """Kernel support is empty or does not generate the lattice."""


class TailDivergence(ConfigError):
    """Heavy-tail exponent outside (0, 2)."""


class ArityMismatch(ConfigError):
    pass


class NumericalError(BRWError, ArithmeticError):
    """A numerical routine could not meet its tolerance."""


class QuadratureNotConverged(NumericalError):
    pass


class BracketFailure(NumericalError):
    pass


class TruncationTooSmall(NumericalError):
    pass


class StiffnessFailure(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class NonPositiveValues(NumericalError):
    pass


class DegenerateWindow(NumericalError):
    pass


class WindowTooShort(NumericalError):
    pass


class TailUnbounded(NumericalError):
    pass


class UnsupportedCombination(BRWError, ValueError):
    pass


class WrongRegime(BRWError, ValueError):
    pass


class SimulationTruncated(BRWError, RuntimeError):
    """A population or event cap stopped the simulation; ``partial`` holds what was recorded."""

    def __init__(self, message: str = "", partial=None):
        super().__init__(message)
        self.partial = partial


class PopulationCapExceeded(SimulationTruncated):
    pass


class EventCapExceeded(SimulationTruncated):
    pass
