import logging
from typing import List

from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field

from config import settings
from services.adc import AdcConfig, design_quantizer, power, sample_count, solve_budget
from services.errors import ToolkitError, http_status

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/adc", tags=["adc"])

# Request / Response Contracts (Pydantic Models)

class PowerRequest(BaseModel):
    """Single ADC operating point"""
    bit_depth: int = Field(..., ge=1, le=32, description="Bits per sample")
    sampling_rate: float = Field(..., ge=0, description="Sampling rate in Hz")
    walden_c: float = Field(default=settings.WALDEN_C_J, gt=0, description="Joules per conversion step")
    duration: float = Field(default=settings.DURATION_S, gt=0, description="Training duration in seconds")

class OperatingPoint(BaseModel):
    bit_depth: int
    sampling_rate: float
    sample_count: int
    power_w: float
    energy_j: float
    feasible: bool

class BudgetRequest(BaseModel):
    """Power budget to split across bit depths"""
    power_budget: float = Field(default=settings.POWER_BUDGET_W, description="Watts")
    walden_c: float = Field(default=settings.WALDEN_C_J, gt=0)
    duration: float = Field(default=settings.DURATION_S, gt=0)
    bit_depths: List[int] = Field(default_factory=lambda: list(range(2, 9)))

class BudgetResponse(BaseModel):
    status: str
    points: List[OperatingPoint]

class QuantizerRequest(BaseModel):
    bit_depth: int = Field(..., ge=1, le=16)
    input_std: float = Field(default=1.0, gt=0, description="Standard deviation of the Gaussian input")

class QuantizerResponse(BaseModel):
    status: str
    bit_depth: int
    input_std: float
    thresholds: List[float]
    levels: List[float]
    mse: float
    iterations: int


def _point(config: AdcConfig) -> OperatingPoint:
    return OperatingPoint(
        bit_depth=config.bit_depth,
        sampling_rate=config.sampling_rate,
        sample_count=config.sample_count,
        power_w=config.power,
        energy_j=config.energy,
        feasible=config.feasible,
    )


@router.post("/power", response_model=OperatingPoint)
def adc_power(request: PowerRequest):
    """
    Power and energy of one ADC operating point

    P = c * f_s * 2^B; the sample count is floor(T * f_s).
    """
    config = AdcConfig(
        bit_depth=request.bit_depth,
        sampling_rate=request.sampling_rate,
        sample_count=sample_count(request.duration, request.sampling_rate),
        walden_c=request.walden_c,
        duration=request.duration,
    )
    logger.info(f"ADC power for B={config.bit_depth}: {power(config):.4e} W")
    return _point(config)


@router.post("/budget", response_model=BudgetResponse)
def adc_budget(request: BudgetRequest):
    """Sampling rate and sample count per bit depth that spend the whole budget"""
    try:
        configs = solve_budget(request.power_budget, request.walden_c, request.duration, request.bit_depths)
    except ToolkitError as e:
        raise HTTPException(status_code=http_status(e), detail=e.to_dict())
    return BudgetResponse(status="success", points=[_point(c) for c in configs])


@router.post("/quantizer", response_model=QuantizerResponse)
def adc_quantizer(request: QuantizerRequest):
    """Lloyd-Max thresholds and levels for a zero-mean Gaussian input"""
    try:
        q = design_quantizer(request.bit_depth, request.input_std)
    except ToolkitError as e:
        raise HTTPException(status_code=http_status(e), detail=e.to_dict())
    return QuantizerResponse(
        status="success",
        bit_depth=q.bit_depth,
        input_std=q.input_std,
        thresholds=q.thresholds.tolist(),
        levels=q.levels.tolist(),
        mse=q.mse,
        iterations=q.iterations,
    )
