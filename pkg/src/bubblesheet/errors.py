"""Exception types shared across the package."""


class BubbleSheetError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(BubbleSheetError, ValueError):
    """Unsupported cylinder, incompatible grids, CFL violations, bad configs."""


class DomainError(BubbleSheetError, ValueError):
    """A graph function left its domain of definition (e.g. v <= 0)."""


class InputError(BubbleSheetError, ValueError):
    """Malformed or insufficient input data (empty histories, short series)."""


class BlowUpError(BubbleSheetError):
    """The flow lost positivity of the graph radius during a time step."""

    def __init__(self, message, tau=None, node=None, value=None):
        super().__init__(message)
        self.tau = tau
        self.node = node
        self.value = value


class StiffnessError(BubbleSheetError):
    """An adaptive integrator could not make progress."""

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class SolverError(BubbleSheetError):
    """A shooting / bracketing procedure failed."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []
