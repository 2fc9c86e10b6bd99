"""Exception types raised by the library.

Every class derives from a builtin so callers that only care about
``ValueError`` / ``RuntimeError`` keep working.
"""


class InvalidArgument(ValueError):
    pass


class UnphysicalBath(ValueError):
    """|M|^2 > N(N+1), negative occupancy, or a non-positive noise weight."""


class Unsupported(ValueError):
    """Parameter combination the model does not cover (e.g. beta != 0 with feedback)."""


class MalformedGenerator(ValueError):
    pass


class NoUniqueSteadyState(RuntimeError):
    pass


class StepTooLarge(ValueError):
    pass


class StateInvariantError(RuntimeError):
    """A propagated or conditioned state drifted outside tolerance."""

    def __init__(self, message, *, step=None, seed=None):
        super().__init__(message)
        self.step = step
        self.seed = seed
