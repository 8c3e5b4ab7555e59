"""Exception types raised across the evaluation engine.

Everything derives from :class:`HREvalError`, which the CLI maps to exit code 1
(bad input). Most classes also subclass :class:`ValueError` so callers that only
care about "bad value" can keep catching that.
"""


class HREvalError(Exception):
    """Base class for input/contract violations."""


class FormatError(HREvalError, ValueError):
    """A dump or manifest file does not follow the on-disk layout."""


class MissingSplit(HREvalError, KeyError):
    """A required split role is absent from a run manifest."""

    def __str__(self):
        return str(self.args[0]) if self.args else "missing split"


class ShapeMismatch(HREvalError, ValueError):
    pass


class EmptySplit(HREvalError, ValueError):
    pass


class UnlabeledData(HREvalError, ValueError):
    pass


class EmptyClass(HREvalError, ValueError):
    pass


class EmptyList(HREvalError, ValueError):
    pass


class DegeneratePerformance(HREvalError, ValueError):
    """Reference (in-distribution) performance is zero, so a ratio score is undefined."""


class WeightError(HREvalError, ValueError):
    pass


class NoGradientOracle(HREvalError):
    """A gradient-based procedure was requested but only logits are available."""


class AdvUnavailable(HREvalError):
    pass


class PoolTooSmall(HREvalError, ValueError):
    pass


class ZeroVariance(HREvalError, ValueError):
    pass


class LengthMismatch(HREvalError, ValueError):
    pass


class MissingGroup(HREvalError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "missing group"


class EmptyTable(HREvalError, ValueError):
    pass
