"""Exception types shared across the pipeline."""


class FactlineError(Exception):
    """Base class for all package errors."""


class SchemaError(FactlineError):
    """Invalid schema definition or annotation string."""


class UnparseableDate(FactlineError):
    """A raw value could not be read as a date at any supported precision."""


class UncoercibleValue(FactlineError):
    """A field value cannot be normalized to its declared type."""

    def __init__(self, field: str, raw: object):
        super().__init__(f"field {field!r}: cannot coerce {raw!r}")
        self.field = field
        self.raw = raw


class ProviderError(FactlineError):
    """Transport or auth failure talking to the model provider."""


class ParseExhausted(FactlineError):
    """Model output stayed malformed after all repair attempts."""


class ContextError(FactlineError):
    """The context phase produced an unusable operational context."""

    def __init__(self, field: str, message: str = ""):
        super().__init__(message or f"no context produced for field {field!r}")
        self.field = field


class PlanRejected(FactlineError):
    """The remediation analyst produced an invalid plan."""


class LookupFailed(FactlineError):
    """No fact-lookup page yielded the requested value."""


class ApplyFailed(FactlineError):
    """A remediation plan could not be applied to the record."""


class RulepackError(FactlineError):
    """Malformed rulepack document for rules mode."""


class RunAborted(FactlineError):
    """Dataset-level failure that prevents the run from starting."""
