"""Exception types shared across the package.

Every failure mode that callers are expected to handle programmatically gets
its own class; generic misuse (bad argument ranges, malformed parameter
bundles) raises plain ValueError.
"""


class WhittleCacheError(Exception):
    """Base class for all package-specific errors."""


class DegenerateDenominator(WhittleCacheError):
    """The closed-form index ratio has a vanishing denominator at some threshold.

    Signals an instance where the passive-probability difference between
    adjacent threshold policies is below 1e-12, making the index ill-posed.
    """

    def __init__(self, threshold, denominator):
        self.threshold = threshold
        self.denominator = denominator
        super().__init__(
            f"index denominator {denominator!r} at threshold {threshold} is "
            f"below 1e-12; the closed form is ill-posed here"
        )


class MaxIterationsExceeded(WhittleCacheError):
    """An iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, what, cap, residual):
        self.what = what
        self.cap = cap
        self.residual = residual
        super().__init__(
            f"{what} did not reach tolerance within {cap} iterations "
            f"(last residual {residual:.3e})"
        )


class BracketNotFound(WhittleCacheError):
    """No multiplier in the search interval makes the greedy action flip.

    The greedy action at the queried state is still active at the upper end
    of the search interval; on a well-posed instance this signals that the
    state never becomes passive for any subsidy in range.
    """

    def __init__(self, state, w_hi):
        self.state = state
        self.w_hi = w_hi
        super().__init__(
            f"greedy action at state {state} is still active at w={w_hi}; "
            f"no indifference point in [0, {w_hi}]"
        )


class DeadSystem(WhittleCacheError):
    """Total event rate is zero: no arrivals possible and nothing to serve."""


class EmptyTrace(WhittleCacheError):
    """A trace file contained no parseable events."""


class NonMonotonicTimestamps(WhittleCacheError):
    """Trace timestamps decreased; carries the offending line number."""

    def __init__(self, line_number, timestamp, previous):
        self.line_number = line_number
        self.timestamp = timestamp
        self.previous = previous
        super().__init__(
            f"line {line_number}: timestamp {timestamp} is earlier than "
            f"preceding timestamp {previous}"
        )


class ConfigError(WhittleCacheError):
    """A run configuration failed schema validation."""
