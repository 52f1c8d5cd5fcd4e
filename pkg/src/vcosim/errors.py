"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Raised for malformed or out-of-contract configuration input.

    The CLI maps this to exit code 2 before any output file is written.
    """


class SimulationDiverged(RuntimeError):
    """Raised when an internal simulator state grows without bound."""
