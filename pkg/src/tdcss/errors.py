"""Exception taxonomy shared across the package.

CLI exit-code mapping: ConfigError and FormatError exit 2, everything
else derived from TdcssError exits 3.
"""


class TdcssError(Exception):
    pass


class ShapeError(TdcssError):
    """Operand dimensions are inconsistent (message names both shapes)."""


class UsageError(TdcssError):
    """Operation invoked in a way its contract forbids."""


class LabelRangeError(TdcssError):
    """A label does not index into the class set being scored."""


class ConfigError(TdcssError):
    """Invalid configuration key or value."""


class DataError(TdcssError):
    """Dataset content violates an invariant (named in the message)."""


class FormatError(TdcssError):
    """A serialized artifact is malformed; message names the byte offset."""


class NumericError(TdcssError):
    """NaN/Inf escaped an operation; message names the operation."""


class MetricError(TdcssError):
    """A metric is undefined for the given inputs (e.g. empty class)."""


class LeakageError(TdcssError):
    """Training attempted to read unseen-class feature rows."""
