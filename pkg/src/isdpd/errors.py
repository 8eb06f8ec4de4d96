"""Exception hierarchy shared by all isdpd modules."""


class IsdpdError(Exception):
    """Base class for every error raised by this package."""


class CoincidentGeometry(IsdpdError, ValueError):
    """A candidate position sits (numerically) on top of a receiver."""


class IllConditioned(IsdpdError, ArithmeticError):
    """The Q x Q Gram matrix of the stacked basis is numerically singular."""


class DegeneratePdf(IsdpdError, ValueError):
    """A discretized density has no mass left to sample from."""


class AllWeightsZero(IsdpdError, ArithmeticError):
    """Every importance realization was rejected."""


class ZeroResultant(IsdpdError, ArithmeticError):
    """The weighted phasor sum vanished, so the circular mean is undefined."""


class BudgetExceeded(IsdpdError, RuntimeError):
    """An exhaustive enumeration would exceed the configured evaluation budget."""


class SchemaError(IsdpdError, ValueError):
    """A configuration document is structurally malformed."""


class ValidationError(IsdpdError, ValueError):
    """A configuration document is well formed but semantically inconsistent."""
