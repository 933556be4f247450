"""Exception and warning types shared across the package."""


class InvalidArgument(ValueError):
    """An argument is outside the domain of the operation.

    ``field`` names the offending parameter when there is one, so callers
    that read values from a config file can point at the right line.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class EstimationError(Exception):
    code = "estimation-error"


class IllPosedDesign(EstimationError):
    code = "ill-posed-design"


class AtomicTermUnidentifiable(EstimationError):
    code = "atomic-term-unidentifiable"


class ConvergenceWarning(UserWarning):
    pass


class DroppedBinsWarning(UserWarning):
    pass
