"""Exception hierarchy for catqueue."""


class CatQueueError(Exception):
    """Base class for all library errors."""


class NegativeRateError(CatQueueError, ValueError):
    """A rate function takes negative values (or a probability leaves [0, 1])."""


class DimensionError(CatQueueError, ValueError):
    """Truncation dimension is too small for the requested operation."""


class ModeMismatchError(CatQueueError, ValueError):
    """Matrix variant or mode does not match the model/system it is applied to."""


class StepTooLargeError(CatQueueError, ValueError):
    """Fixed integration step violates the explicit-stepping stability limit."""


class IntegrationError(CatQueueError, RuntimeError):
    """The integrated state left the probability simplex."""


class NotConvergedError(CatQueueError, RuntimeError):
    """The limiting periodic regime was not reached inside the window."""


class NotErgodicError(CatQueueError, ValueError):
    """A rate curve has non-positive period mean, so no envelope exists."""


class SingularSystemError(CatQueueError, RuntimeError):
    """The stationary linear system could not be solved."""


class BudgetExceededError(CatQueueError, RuntimeError):
    """Truncation refinement exceeded its dimension budget."""


class PerturbationError(CatQueueError, ValueError):
    """A perturbed model violates the admissibility conditions."""


class ConfigError(CatQueueError, ValueError):
    """Invalid experiment configuration."""
