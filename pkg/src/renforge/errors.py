"""Exception and warning types shared across the package."""


class RenforgeError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(RenforgeError, ValueError):
    pass


class UndeclaredVariable(RenforgeError, KeyError):
    pass


class AsymmetryTooLarge(RenforgeError, ValueError):
    pass


class Infeasible(RenforgeError):
    """A conic program (or a feasibility check) has no solution.

    For the sufficient-condition verifiers this is *not* a disproof of the
    property, only a failure to certify it.
    """

    def __init__(self, message="infeasible", block_index=None):
        super().__init__(message)
        self.block_index = block_index


class SolverInfeasible(Infeasible):
    """A training problem that was expected to be feasible is not."""


class NumericalFailure(RenforgeError):
    pass


class NoConvergence(RenforgeError):
    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class AssumptionViolated(RenforgeError, ValueError):
    def __init__(self, clause, message=""):
        super().__init__(message or f"activation assumption violated: {clause}")
        self.clause = clause


class DegenerateReservoir(RenforgeError):
    pass


class TooShortDataset(RenforgeError, ValueError):
    pass


class SingularNormalEquations(RenforgeError):
    pass


class LpFailure(RenforgeError):
    pass


class InvalidModelClass(RenforgeError):
    """The calibrated feasible set excludes the least-squares estimate,
    which points at an inadequate model class / hyperparameter choice."""


class SamplerStalled(RenforgeError):
    pass


class AllScenariosInfeasible(RenforgeError):
    pass


class MissingNeighborMessage(RenforgeError, KeyError):
    def __init__(self, sender, kind):
        super().__init__(f"missing {kind!r} message from subsystem {sender}")
        self.sender = sender
        self.kind = kind


class NumericalBlowup(RenforgeError):
    pass


class ConstantChannel(RenforgeError, ValueError):
    pass


class DegenerateReference(RenforgeError, ValueError):
    pass


class ViolationFound(RenforgeError):
    def __init__(self, trial, step, amount):
        super().__init__(
            f"dissipation decrease inequality violated at trial {trial}, "
            f"step {step} by {amount:.3e}"
        )
        self.trial = trial
        self.step = step
        self.amount = amount


class RankDeficientWarning(UserWarning):
    pass


class WellPosednessUnknownWarning(UserWarning):
    pass
