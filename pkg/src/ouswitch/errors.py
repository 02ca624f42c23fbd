"""Exception types shared across the package."""


class OUSwitchError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(OUSwitchError):
    """Malformed or inconsistent experiment configuration."""


# -- chain -------------------------------------------------------------

class NegativeRate(OUSwitchError):
    """An off-diagonal transition rate is negative."""


class NonFinite(OUSwitchError):
    """A rate or table entry is NaN or infinite."""


class Reducible(OUSwitchError):
    """The positive-rate digraph is not strongly connected."""


class SingularSystem(OUSwitchError):
    """The stationary-distribution solve failed or violated invariants."""


class NoCompleteCycle(OUSwitchError):
    """The path never completes a renewal cycle at the requested anchor."""


# -- path functionals --------------------------------------------------

class Overflow(OUSwitchError):
    """A log-scale intermediate left the representable range."""


# -- stochastic recurrence engine --------------------------------------

class DegenerateSource(OUSwitchError):
    """All pair draws are identical and the recursion is non-contractive."""


class NonContractive(OUSwitchError):
    """Backward-sum truncation cap hit; E log|A| >= 0 or near-critical."""


class MomentDiverges(OUSwitchError):
    """Requested moment does not exist (estimated E A^m >= 1)."""


class PremiseViolated(OUSwitchError):
    """Tail-index estimator premise fails (mean log A >= 0)."""


# -- switching OU / applications ---------------------------------------

class NotStable(OUSwitchError):
    """Stationary sampler requested outside the stable regime."""


class WrongRegime(OUSwitchError):
    """Operation requires a different drift regime."""


class ZeroValue(OUSwitchError):
    """log of a zero value requested; simulation degenerate."""


# -- statistics --------------------------------------------------------

class EmptySample(OUSwitchError):
    """Statistic of an empty sample requested."""
