"""Exception types shared across the package."""


class NumericalRejection(ValueError):
    """An input was valid syntactically but cannot be computed faithfully.

    Raised for grid escape, non-conjugate grids, under-resolved time
    sampling, non-finite samples and retarded-time window underflow.
    """


class ConfigError(ValueError):
    """Scenario configuration is malformed; ``path`` names the offending key."""

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)
