"""Exception hierarchy.

Every error raised on purpose by the package derives from ``FormctlError``
so callers (and the CLI) can tell modelling failures apart from bugs.
"""


class FormctlError(Exception):
    """Base class for all package errors."""


# formation graph
class NullSpaceEmpty(FormctlError):
    pass


class DegenerateGeometry(FormctlError):
    pass


class CollocatedAgents(DegenerateGeometry):
    pass


class MissingConstraint(FormctlError):
    pass


class NotLocalizable(FormctlError):
    pass


class IndexOutOfRange(FormctlError, IndexError):
    pass


# maneuver
class TimeOutOfRange(FormctlError, ValueError):
    pass


# gain synthesis
class NotDetectable(FormctlError):
    pass


class UnstablePole(FormctlError, ValueError):
    pass


class RiccatiDiverged(FormctlError):
    pass


class DefectiveW(FormctlError):
    pass


# agents
class RoleMismatch(FormctlError):
    pass


class MissingNeighbor(FormctlError, KeyError):
    pass


class MissingEdgeEstimate(FormctlError, KeyError):
    pass


class DimensionMismatch(FormctlError, ValueError):
    pass


# simulation
class ZetaViolated(FormctlError):
    pass


class NumericalBlowup(FormctlError):
    pass


class BoundViolated(FormctlError):
    def __init__(self, message, time=None, leader=None):
        super().__init__(message)
        self.time = time
        self.leader = leader


# scenario / cli
class ParseError(FormctlError):
    pass


class ValidationError(FormctlError, ValueError):
    pass


class RegressionMismatch(FormctlError):
    def __init__(self, message, entries=()):
        super().__init__(message)
        self.entries = list(entries)
