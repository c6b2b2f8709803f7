"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value violates its invariants."""


class NumericError(RuntimeError):
    """A numeric computation produced non-finite values."""


class TrajectoryParseError(ValueError):
    """A trajectory CSV row could not be parsed.

    Carries the 1-based row number of the offending line.
    """

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row
