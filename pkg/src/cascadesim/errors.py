"""Exception hierarchy shared across the simulator."""


class SimulationError(Exception):
    """Base class for all cascadesim errors."""


class ConfigurationError(SimulationError):
    """Structurally invalid input: dimension mismatch, bad parameter, bad index."""


class PreconditionError(SimulationError):
    """A documented call precondition was violated."""


class NumericalError(SimulationError):
    """Nonfinite value or numerical degeneracy where math requires otherwise."""


class ProviderError(SimulationError):
    """A text/embedding provider failed (timeout, bad payload, exhausted retries)."""


class UndefinedCorrelationError(SimulationError):
    """Correlation requested on a zero-variance series; there is no defined value."""


class ScenarioValidationError(SimulationError):
    """Scenario failed validation. Carries the full list of violations."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
