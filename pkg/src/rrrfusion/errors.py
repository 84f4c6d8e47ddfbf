"""Exception types shared across the package."""


class RrrFusionError(Exception):
    """Base class."""


class Unreachable(RrrFusionError):
    def __init__(self, leg, message=None):
        self.leg = leg
        super().__init__(message or f"pose unreachable for leg {leg}")


class Singular(RrrFusionError):
    pass


class NoConvergence(RrrFusionError):
    pass


class InnovationCovarianceSingular(RrrFusionError):
    pass


class DegenerateExcitation(RrrFusionError):
    pass


class DegenerateRange(RrrFusionError):
    pass


class EmptyLog(RrrFusionError):
    pass


class ConfigInvalid(RrrFusionError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class SimulationError(RrrFusionError):
    pass
