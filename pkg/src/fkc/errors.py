"""Exception hierarchy shared by all fkc modules."""


class FKCError(Exception):
    """Base class for every error raised by fkc."""


class DomainError(FKCError, ValueError):
    """An argument lies outside the domain of a function (e.g. t not in [0, 1])."""


class ShapeError(FKCError, ValueError):
    """Array shapes do not match the expected dimension."""


class UnsupportedKindError(FKCError, TypeError):
    """Operation not defined for this kind of object (e.g. VP-only on a VE schedule)."""


class ParameterError(FKCError, ValueError):
    """Parameters violate a documented constraint."""


class ConfigurationError(FKCError, ValueError):
    """Components that must agree (schedules, lengths) do not."""


class CapabilityError(FKCError, TypeError):
    """A model lacks a capability (density, score, laplacian) the caller needs."""


class CapacityError(FKCError, ValueError):
    """Result would exceed a configured size cap."""


class SingularityError(FKCError, ValueError):
    """Evaluation hit a singular configuration (e.g. coincident particles)."""


class DegenerateEnsembleError(FKCError, ValueError):
    """No particle carries a finite log-weight."""


class SimulationError(FKCError, RuntimeError):
    """Non-finite drift or weight encountered while simulating."""

    def __init__(self, message, step=None, particle=None):
        super().__init__(message)
        self.step = step
        self.particle = particle
