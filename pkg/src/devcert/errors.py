"""Exception hierarchy shared across the package."""


class DevcertError(Exception):
    """Base class for all errors raised by this package."""


class SchemaMismatch(DevcertError):
    """A point, box, or model does not fit the feature space it is used with."""


class AbstainUnconfigured(DevcertError):
    """An abstaining prediction was seen but the deviation function has no abstain value."""


class UnsupportedNorm(DevcertError):
    """Exact geometry was requested for a norm it is not available for."""


class EmptyCertSet(DevcertError):
    """No part of the model's domain meets the certification set."""


class EmptyRegion(DevcertError):
    """An optimization region is empty."""


class AssumptionViolated(DevcertError):
    """A deviation function or link lacks a structural property the method needs."""


class UnsupportedCondition(DevcertError):
    """A rule condition is outside the single-feature grammar."""


class UnsupportedPair(DevcertError):
    """No certifier exists for this (model, reference) class pair."""


class BudgetTooSmall(DevcertError):
    """The query budget cannot cover the partition."""


class OracleFailure(DevcertError):
    """An external oracle crashed or returned garbage."""


class ParseError(DevcertError):
    """A file could not be parsed."""


class SchemaError(DevcertError):
    """A parsed document violates the interchange schema."""


class VersionError(DevcertError):
    """Unrecognized interchange format version."""


class MissingStats(DevcertError):
    """Normalization statistics are neither declared nor computable."""
