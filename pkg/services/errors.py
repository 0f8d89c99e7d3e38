from typing import Optional, Sequence


class ToolkitError(Exception):
    """Base error for the estimation toolkit. Carries a machine-readable error code."""

    error_code: str = "TOOLKIT_ERROR"

    def __init__(self, message: str, error_code: Optional[str] = None):
        super().__init__(message)
        self.message = message
        if error_code is not None:
            self.error_code = error_code

    def to_dict(self) -> dict:
        return {"status": "error", "error_code": self.error_code, "error_message": self.message}


class ConfigurationError(ToolkitError):
    error_code = "CONFIGURATION_ERROR"


class DomainError(ToolkitError):
    error_code = "DOMAIN_ERROR"


class ConditioningError(ToolkitError):
    """Restricted matrix is not full column rank."""

    error_code = "CONDITIONING_ERROR"

    def __init__(self, message: str, columns: Sequence[int] = ()):
        super().__init__(message)
        self.columns = [int(c) for c in columns]


class DivergenceError(ToolkitError):
    error_code = "DIVERGENCE_ERROR"

    def __init__(self, message: str, tau: float):
        super().__init__(message)
        self.tau = tau


class NumericalError(ToolkitError):
    error_code = "NUMERICAL_ERROR"


HTTP_STATUS = {
    ConfigurationError.error_code: 422,
    DomainError.error_code: 400,
    ConditioningError.error_code: 409,
    DivergenceError.error_code: 500,
    NumericalError.error_code: 500,
}


def http_status(exc: ToolkitError) -> int:
    return HTTP_STATUS.get(exc.error_code, 500)
