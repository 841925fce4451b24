"""Exception hierarchy shared by the bound engine, simulator and CLI."""


class AoiError(Exception):
    """Base class for all package errors."""


class ParameterError(AoiError, ValueError):
    """A model or function argument lies outside its domain."""


class InfeasibleError(AoiError):
    """No parameter choice satisfies the stability or feasibility constraints."""


class EnvelopeInapplicableError(AoiError):
    """The Markov envelope prefactor is undefined (no state with rate below the envelope rate)."""


class NumericError(AoiError, ArithmeticError):
    """An iterative numerical routine failed to converge."""


class DomainError(AoiError, ValueError):
    """A closed-form expression was evaluated below its validity floor."""


class UnboundedQuantileError(AoiError):
    """A bound curve never drops below the requested probability within the bracket cap."""


class InsufficientDataError(AoiError):
    """Too few effective updates to estimate age statistics."""


class SimulationOnlyError(AoiError):
    """The splitting policy has no analytical bound (e.g. join-shortest-queue)."""


class ScenarioError(AoiError, ValueError):
    """A scenario file could not be parsed or validated."""
