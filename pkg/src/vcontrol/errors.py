"""Exception types shared across the workbench."""


class WorkbenchError(Exception):
    """Base class for all workbench errors."""


class ConfigurationError(WorkbenchError):
    """Invalid or inconsistent configuration (bad picture, bad schema, ...)."""


class IntegrationError(WorkbenchError):
    """A propagator detected a loss of accuracy (trace drift, overflow)."""


class NumericalError(WorkbenchError):
    """A numerical routine failed to converge."""


class IllConditionedError(NumericalError):
    """Nearly degenerate poles or a singular linear system."""


class ResolutionError(NumericalError):
    """A trajectory is too coarse for the requested numerical derivative."""


class DataError(WorkbenchError):
    """Input data violate a structural assumption (e.g. Hermiticity)."""


class CapacityError(WorkbenchError):
    """The hierarchy would exceed the configured ADO count cap."""


class IncompatibleStateError(WorkbenchError):
    """A stored hierarchy state does not match the current configuration."""


class CorruptCheckpointError(WorkbenchError):
    """A checkpoint byte stream could not be decoded."""
