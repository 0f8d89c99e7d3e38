import json
import logging
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field

from config import settings
from services.errors import ToolkitError, http_status
from services.harness import (
    ExperimentConfig,
    emit_bound_overlay,
    emit_table2,
    khat_robustness,
    rip_report,
    run_sweep,
)

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/experiments", tags=["experiments"])

# Request / Response Contracts (Pydantic Models)

class Table2Request(BaseModel):
    power_budget: float = Field(default=settings.POWER_BUDGET_W, description="Watts")
    walden_c: float = Field(default=settings.WALDEN_C_J, gt=0)
    duration: float = Field(default=settings.DURATION_S, gt=0)
    bit_depths: List[int] = Field(default_factory=lambda: list(range(2, 9)))
    verbatim: bool = Field(default=False, description="Substitute the published sample counts")

class RowsResponse(BaseModel):
    status: str
    config_hash: Optional[str] = None
    rows: List[Dict[str, Any]]

class SweepResponse(BaseModel):
    status: str
    config_hash: str
    aggregates: List[Dict[str, Any]]
    optimum: List[Dict[str, Any]]
    infeasible_bit_depths: List[int]

class KhatRequest(BaseModel):
    config: ExperimentConfig
    khat_grid: List[int] = Field(..., min_length=1)
    bit_depth: Optional[int] = None
    snr_db: Optional[float] = None

class KhatResponse(BaseModel):
    status: str
    config_hash: str
    summary: List[Dict[str, Any]]
    trials: List[Dict[str, Any]]

class RipProbeRequest(BaseModel):
    config: ExperimentConfig
    order: Optional[int] = Field(default=None, ge=1, description="Sparsity order, defaults to Nt*Nr*K")
    num_samples: Optional[int] = Field(default=None, ge=1)


def frame_rows(frame: pd.DataFrame) -> List[Dict[str, Any]]:
    """JSON-safe records; NaN and infinities become null."""
    clean = frame.replace([np.inf, -np.inf], np.nan)
    return json.loads(clean.to_json(orient="records"))


def _fail(e: ToolkitError):
    logger.error(f"{e.error_code}: {e.message}")
    raise HTTPException(status_code=http_status(e), detail=e.to_dict())


@router.post("/table2", response_model=RowsResponse)
def table2(request: Table2Request):
    """ADC operating points in the layout of the published 20 mW table"""
    try:
        frame = emit_table2(
            request.power_budget, request.walden_c, request.duration, request.bit_depths, request.verbatim
        )
    except ToolkitError as e:
        _fail(e)
    return RowsResponse(status="success", rows=frame_rows(frame))


@router.post("/sweep", response_model=SweepResponse)
def sweep(config: ExperimentConfig):
    """
    Monte Carlo sweep over bit depths and SNRs

    Returns per-cell aggregates and the RSNR-optimal bit depth per SNR.
    Large configurations are better run through the command line.
    """
    try:
        result = run_sweep(config)
    except ToolkitError as e:
        _fail(e)
    return SweepResponse(
        status="success",
        config_hash=result.config_hash,
        aggregates=frame_rows(result.aggregates),
        optimum=frame_rows(result.optimum),
        infeasible_bit_depths=result.infeasible,
    )


@router.post("/bound", response_model=RowsResponse)
def bound(config: ExperimentConfig):
    """Oracle RSNR upper bound per bit depth and SNR"""
    try:
        frame = emit_bound_overlay(config)
    except ToolkitError as e:
        _fail(e)
    return RowsResponse(status="success", config_hash=config.config_hash(), rows=frame_rows(frame))


@router.post("/khat", response_model=KhatResponse)
def khat(request: KhatRequest):
    """BIHT + linear RSNR against the sparsity target on paired data"""
    try:
        trials, summary = khat_robustness(request.config, request.khat_grid, request.bit_depth, request.snr_db)
    except ToolkitError as e:
        _fail(e)
    return KhatResponse(
        status="success",
        config_hash=request.config.config_hash(),
        summary=frame_rows(summary),
        trials=frame_rows(trials),
    )


@router.post("/rip-probe", response_model=RowsResponse)
def rip_probe(request: RipProbeRequest):
    """Sampled restricted isometry constants of the stacked model and of each block"""
    try:
        frame = rip_report(request.config, request.order, request.num_samples)
    except ToolkitError as e:
        _fail(e)
    return RowsResponse(status="success", config_hash=request.config.config_hash(), rows=frame_rows(frame))
