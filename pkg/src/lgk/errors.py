"""Exception hierarchy for lgk."""


class LgkError(Exception):
    """Base class for all errors raised by lgk."""


class ConfigError(LgkError):
    """Malformed or inconsistent configuration input."""


# velocity sets
class DuplicateVelocity(LgkError):
    pass


class EmptySet(LgkError):
    pass


class DegeneratePairForm(LgkError):
    pass


class MissingPairForm(LgkError):
    pass


class GramNotInvertible(LgkError):
    pass


class NewtonDiverged(LgkError):
    """Newton inversion of the mass-momentum map did not converge."""

    def __init__(self, message, p=None, site=None):
        super().__init__(message)
        self.p = p
        self.site = site


# lattice
class BoxTooLarge(LgkError):
    pass


class NotNeighbors(LgkError):
    pass


class CollisionNotEnabled(LgkError):
    pass


# dynamics / generators
class NegativeRate(LgkError):
    pass


class StateSpaceTooLarge(LgkError):
    pass


# micro-canonical analysis
class EigensolveFailure(LgkError):
    pass


class OutOfDomain(LgkError):
    pass


class NoSolution(LgkError):
    pass


class ChainInvariantViolated(LgkError):
    pass


# pde
class BlowUpDetected(LgkError):
    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class IoFailure(LgkError):
    pass
