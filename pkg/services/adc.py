import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import linalg
from scipy.stats import norm

from config import settings
from services.errors import ConfigurationError, NumericalError

logger = logging.getLogger(__name__)

LEVEL_TOLERANCE = 1e-10
MAX_DESIGN_ITERATIONS = 100_000
# Guards the floor of T * f_s against representation error (e.g. 1011.9999999)
_FLOOR_GUARD = 1e-9


class AdcConfig(BaseModel):
    """One ADC operating point under the Walden figure of merit."""

    model_config = ConfigDict(frozen=True)

    bit_depth: int = Field(..., ge=1, description="Bits per sample (B)")
    sampling_rate: float = Field(..., ge=0, description="Sampling rate f_s in Hz")
    sample_count: int = Field(..., ge=0, description="Samples in the training window, floor(T * f_s)")
    walden_c: float = Field(default=settings.WALDEN_C_J, gt=0, description="Energy per conversion step in J")
    duration: float = Field(default=settings.DURATION_S, gt=0, description="Training duration T in s")

    @property
    def feasible(self) -> bool:
        return self.sample_count >= 1

    @property
    def exact_sample_count(self) -> float:
        return self.duration * self.sampling_rate

    @property
    def power(self) -> float:
        return power(self)

    @property
    def energy(self) -> float:
        return power(self) * self.duration


@dataclass(frozen=True)
class QuantizerModel:
    """Lloyd-Max codebook for a zero-mean Gaussian of scale input_std."""

    bit_depth: int
    input_std: float
    thresholds: np.ndarray
    levels: np.ndarray
    mse: float
    iterations: int = 0

    def cell_probabilities(self) -> np.ndarray:
        _, _, prob, _ = _cell_statistics(self.thresholds / self.input_std)
        return prob


def power(config: AdcConfig) -> float:
    """P = c * f_s * 2^B in watts."""
    return config.walden_c * config.sampling_rate * 2.0 ** config.bit_depth


def sample_count(duration: float, sampling_rate: float) -> int:
    return int(math.floor(duration * sampling_rate * (1.0 + _FLOOR_GUARD)))


def solve_budget(
    power_budget: float,
    walden_c: float = settings.WALDEN_C_J,
    duration: float = settings.DURATION_S,
    bit_depths: Sequence[int] = tuple(range(2, 9)),
) -> List[AdcConfig]:
    """
    Operating points that spend the whole power budget.

    Args:
        power_budget: Watts available to the ADC
        walden_c: Walden constant in joules per conversion step
        duration: Training window in seconds
        bit_depths: Bit depths to solve for

    Returns:
        AdcConfig per bit depth, sorted by bit depth. Points with M = 0 are kept and
        report feasible == False.
    """
    if power_budget <= 0:
        raise ConfigurationError(f"power budget must be positive, got {power_budget}")
    if not bit_depths:
        raise ConfigurationError("bit_depths must not be empty")
    configs = []
    for bits in sorted(set(int(b) for b in bit_depths)):
        if bits < 1:
            raise ConfigurationError(f"bit depth must be at least 1, got {bits}")
        rate = power_budget / (walden_c * 2.0 ** bits)
        config = AdcConfig(
            bit_depth=bits,
            sampling_rate=rate,
            sample_count=sample_count(duration, rate),
            walden_c=walden_c,
            duration=duration,
        )
        if not config.feasible:
            logger.warning(f"B={bits} infeasible under {power_budget} W: T*f_s={config.exact_sample_count:.3f}")
        configs.append(config)
    return configs


def _cell_statistics(thresholds: np.ndarray) -> tuple:
    # Standard normal cells bounded by the thresholds and +-inf
    lower = np.concatenate(([-np.inf], thresholds))
    upper = np.concatenate((thresholds, [np.inf]))
    pdf_lower, pdf_upper = norm.pdf(lower), norm.pdf(upper)
    prob = np.where(
        upper <= 0,
        norm.cdf(upper) - norm.cdf(lower),
        norm.sf(lower) - norm.sf(upper),
    )
    return lower, upper, prob, (pdf_lower - pdf_upper) / prob


def _threshold_residual(thresholds: np.ndarray, levels: np.ndarray) -> np.ndarray:
    return thresholds - 0.5 * (levels[:-1] + levels[1:])


def _newton_step(thresholds: np.ndarray) -> np.ndarray:
    lower, upper, prob, levels = _cell_statistics(thresholds)
    residual = _threshold_residual(thresholds, levels)
    pdf_t = norm.pdf(thresholds)
    # Derivatives of each centroid with respect to its upper and lower edge
    d_upper = pdf_t * (thresholds - levels[:-1]) / prob[:-1]
    d_lower = pdf_t * (levels[1:] - thresholds) / prob[1:]
    main = 1.0 - 0.5 * (d_upper + d_lower)
    bands = np.zeros((3, thresholds.size))
    bands[1] = main
    bands[0, 1:] = -0.5 * d_upper[1:]
    bands[2, :-1] = -0.5 * d_lower[:-1]
    return linalg.solve_banded((1, 1), bands, -residual)


def _compander_thresholds(levels: int) -> np.ndarray:
    # Gaussian point density proportional to pdf^(1/3)
    return np.sqrt(3.0) * norm.ppf(np.arange(1, levels) / levels)


def _max_residual(thresholds: np.ndarray) -> float:
    _, _, _, levels = _cell_statistics(thresholds)
    return float(np.max(np.abs(_threshold_residual(thresholds, levels))))


def _distortion(thresholds: np.ndarray, levels: np.ndarray, prob: np.ndarray) -> float:
    # x * pdf(x) is zero at both infinite edges
    edge_term = thresholds * norm.pdf(thresholds)
    lower_term = np.concatenate(([0.0], edge_term))
    upper_term = np.concatenate((edge_term, [0.0]))
    # Per cell: E[x^2; cell] - level^2 * P(cell), using centroid levels
    cells = prob + lower_term - upper_term - levels ** 2 * prob
    return float(np.sum(np.clip(cells, 0.0, None)))


@lru_cache(maxsize=64)
def _design_unit(bit_depth: int) -> tuple:
    count = 2 ** bit_depth
    thresholds = _compander_thresholds(count)
    levels = _cell_statistics(thresholds)[3]
    for iteration in range(1, MAX_DESIGN_ITERATIONS + 1):
        current = _max_residual(thresholds)
        candidate = None
        step = _newton_step(thresholds)
        scale = 1.0
        for _ in range(20):
            trial = thresholds + scale * step
            if np.all(np.diff(trial) > 0) and _max_residual(trial) < current:
                candidate = trial
                break
            scale *= 0.5
        if candidate is None:
            # Lloyd step: thresholds at the midpoints of the current centroids
            candidate = 0.5 * (levels[:-1] + levels[1:])
        thresholds = candidate
        new_levels = _cell_statistics(thresholds)[3]
        change = float(np.max(np.abs(new_levels - levels)))
        levels = new_levels
        if change < LEVEL_TOLERANCE:
            prob = _cell_statistics(thresholds)[2]
            return thresholds, levels, _distortion(thresholds, levels, prob), iteration
    raise NumericalError(f"Lloyd-Max design for B={bit_depth} did not converge in {MAX_DESIGN_ITERATIONS} iterations")


def design_quantizer(bit_depth: int, input_std: float) -> QuantizerModel:
    """
    MSE-optimal scalar quantizer for N(0, input_std^2).

    The unit-variance design is computed once per bit depth and scaled, so designs at
    different scales are exact multiples of each other.
    """
    if bit_depth < 1:
        raise ConfigurationError(f"bit depth must be at least 1, got {bit_depth}")
    if not input_std > 0:
        raise ConfigurationError(f"input_std must be positive, got {input_std}")
    thresholds, levels, mse, iterations = _design_unit(int(bit_depth))
    logger.debug(f"Quantizer B={bit_depth}: mse={mse:.6g} (unit scale) after {iterations} iterations")
    return QuantizerModel(
        bit_depth=int(bit_depth),
        input_std=float(input_std),
        thresholds=thresholds * input_std,
        levels=levels * input_std,
        mse=mse * input_std ** 2,
        iterations=iterations,
    )


def quantize(q: QuantizerModel, samples: np.ndarray) -> np.ndarray:
    """Map each sample to the level of its cell. A sample on a threshold goes to the upper cell."""
    samples = np.asarray(samples, dtype=float)
    cells = np.searchsorted(q.thresholds, samples, side="right")
    return q.levels[cells]


def quantize_complex(q: QuantizerModel, samples: np.ndarray) -> np.ndarray:
    """Quantize real and imaginary parts independently."""
    samples = np.asarray(samples)
    return quantize(q, samples.real) + 1j * quantize(q, samples.imag)


def sign_quantize(samples: np.ndarray) -> np.ndarray:
    """Elementwise sign with zero mapped to +1."""
    return np.where(np.asarray(samples) >= 0, 1.0, -1.0)
