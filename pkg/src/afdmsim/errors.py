class ConfigurationError(ValueError):
    """Raised for inconsistent waveform, channel or experiment settings."""


class InfeasibleTargetError(RuntimeError):
    """Raised when a pilot-count search cannot reach its MSE target."""

    def __init__(self, message: str, best_mse: float, best_M: int):
        super().__init__(message)
        self.best_mse = best_mse
        self.best_M = best_M
