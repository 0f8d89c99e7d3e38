import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from services.adc import QuantizerModel
from services.errors import ConditioningError, ConfigurationError, DomainError
from services.pilot import dependent_columns

logger = logging.getLogger(__name__)

SIGMA_INTERPRETATION = (
    "Sigma is the covariance of the projected noise pinv(X_R|S) e_R; read literally as a mean "
    "of a zero-mean vector it would vanish"
)


@dataclass
class BoundInput:
    channel_energy: float
    sparsity_order: int
    delta: float
    noise_std: float
    quantizer: Optional[QuantizerModel]
    restricted_matrix: np.ndarray
    sigma_matrix: np.ndarray

    def __post_init__(self):
        if self.channel_energy < 0:
            raise ConfigurationError(f"channel energy must be nonnegative, got {self.channel_energy}")
        if not 0.0 <= self.delta < 1.0:
            raise ConfigurationError(f"delta must lie in [0, 1), got {self.delta}")
        if self.sparsity_order < 1:
            raise ConfigurationError("sparsity order must be at least 1")
        sigma = np.asarray(self.sigma_matrix)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise ConfigurationError(f"sigma matrix must be square, got {sigma.shape}")
        if not np.allclose(sigma, sigma.T, atol=1e-12 * max(1.0, float(np.abs(sigma).max(initial=0.0)))):
            raise ConfigurationError("sigma matrix must be symmetric")


@dataclass(frozen=True)
class BoundReport:
    linear: float
    db: float
    infinite: bool
    lambda_min: float
    note: str = SIGMA_INTERPRETATION


def effective_noise_variance(noise_std: float, quantizer: Optional[QuantizerModel]) -> float:
    """sigma_e^2 plus the quantizer distortion, treating quantization as additive white noise."""
    distortion = quantizer.mse if quantizer is not None else 0.0
    return float(noise_std) ** 2 + distortion


def sigma_matrix(restricted_matrix: np.ndarray, effective_std: float) -> np.ndarray:
    """Covariance sigma_eff^2 (A^T A)^-1 of the projected white noise."""
    matrix = np.asarray(restricted_matrix)
    dependent = dependent_columns(matrix)
    if dependent.size:
        raise ConditioningError(
            f"restricted matrix has {dependent.size} dependent columns out of {matrix.shape[1]}",
            columns=dependent,
        )
    gram = matrix.conj().T @ matrix
    sigma = effective_std ** 2 * np.linalg.inv(gram)
    return np.real_if_close(0.5 * (sigma + sigma.conj().T))


def oracle_rsnr_bound(bound_input: BoundInput) -> BoundReport:
    """||h_R||^2 / ((s / (1 + delta)) * lambda_min(Sigma)), as a linear value and in dB."""
    lam = float(np.linalg.eigvalsh(np.asarray(bound_input.sigma_matrix))[0])
    if lam <= 0.0:
        logger.warning("Smallest eigenvalue of Sigma is zero; bound is infinite")
        return BoundReport(linear=math.inf, db=math.inf, infinite=True, lambda_min=lam)
    denominator = bound_input.sparsity_order / (1.0 + bound_input.delta) * lam
    linear = bound_input.channel_energy / denominator
    db = 10.0 * math.log10(linear) if linear > 0 else -math.inf
    return BoundReport(linear=linear, db=db, infinite=False, lambda_min=lam)


def unquantized_mse_band(sparsity_order: int, delta_hat: float, noise_std: float) -> tuple:
    """(s sigma^2 / (1 + delta), s sigma^2 / (1 - delta)) for the oracle estimator without quantization."""
    if delta_hat < 0:
        raise DomainError(f"delta must be nonnegative, got {delta_hat}")
    if delta_hat >= 1.0:
        raise DomainError(f"MSE band undefined for delta={delta_hat} >= 1")
    scale = sparsity_order * noise_std ** 2
    return scale / (1.0 + delta_hat), scale / (1.0 - delta_hat)
