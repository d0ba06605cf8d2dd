"""Module with the exception types raised by sbridge"""


class SbridgeError(Exception):
    """Base class for all errors raised by sbridge"""
    pass


class ValidationError(SbridgeError, ValueError):
    """A configuration or argument failed validation before any work was done"""
    pass


class DomainError(SbridgeError, ValueError):
    """An argument lies outside the mathematical domain of an operation"""
    pass


class DegenerateCostError(DomainError):
    """Every entry of a cost row (or column) is +inf, so no mass can be transported"""
    pass


class AbsoluteContinuityError(DomainError):
    """p is not absolutely continuous w.r.t. q, i.e., q_i = 0 while p_i > 0"""
    pass


class DivergenceError(SbridgeError, ArithmeticError):
    """
    A non-finite value appeared in a state or loss.

    :param msg: The error message
    :param step: Index of the discretization step (if known)
    :param stage: Index of the training stage (if known)
    :param iteration: Index of the iteration within the stage (if known)
    """

    def __init__(self, msg, step=None, stage=None, iteration=None):
        self.step = step
        self.stage = stage
        self.iteration = iteration
        location = []
        if stage is not None:
            location.append("stage %d" % stage)
        if iteration is not None:
            location.append("iteration %d" % iteration)
        if step is not None:
            location.append("step %d" % step)
        if location:
            msg = "%s (%s)" % (msg, ", ".join(location))
        super().__init__(msg)


class TrainingError(DivergenceError):
    """A non-finite loss or gradient appeared during training"""
    pass


class CacheContractError(SbridgeError, RuntimeError):
    """Cached trajectories are older than the configured refresh period"""
    pass


class DatasetFormatError(SbridgeError, ValueError):
    """
    A dataset file could not be parsed.

    :param msg: The error message
    :param line: 1-based line number of the offending record
    """

    def __init__(self, msg, line=None):
        self.line = line
        if line is not None:
            msg = "line %d: %s" % (line, msg)
        super().__init__(msg)
