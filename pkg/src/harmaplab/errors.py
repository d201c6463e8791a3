"""Exception hierarchy shared by all modules."""


class HarmapError(Exception):
    """Base class for every error raised by the package."""


class SingularMetric(HarmapError):
    pass


class NewtonDivergence(HarmapError):
    pass


class DomainExit(HarmapError):
    pass


class ChartExit(HarmapError):
    """A map value left the validity region of the chart.

    ``iterate`` is set when raised from inside a fixed-point loop.
    """

    def __init__(self, msg, iterate=None):
        super().__init__(msg)
        self.iterate = iterate


class TooCoarse(HarmapError):
    pass


class NonpositiveWeight(HarmapError):
    pass


class EmptyRegion(HarmapError):
    pass


class DegenerateLevel(HarmapError):
    pass


class NoConvergence(HarmapError):
    """Iterative solver hit its cap; ``report`` holds the partial state."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class UnsupportedOrder(HarmapError):
    pass


class ZeroDenominator(HarmapError):
    pass


class SmallnessViolated(HarmapError):
    pass


class ParameterWindowViolated(HarmapError):
    pass


class InsufficientLevels(HarmapError):
    pass


class DomainError(HarmapError):
    pass


class ConfigError(HarmapError):
    pass
