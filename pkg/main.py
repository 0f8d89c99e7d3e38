from fastapi.middleware.cors import CORSMiddleware
import uvicorn
import logging

from fastapi import FastAPI

from config import settings
from routers import adc, experiments

# Configure logging
logging.basicConfig(
    level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)

# Create FastAPI app
app = FastAPI(
    title=settings.API_TITLE,
    version=settings.API_VERSION,
    description=settings.API_DESCRIPTION
)

# Add CORS middleware
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Include routers
app.include_router(adc.router)
app.include_router(experiments.router)

@app.get("/")
async def root():
    return {
        "message": f"Welcome to {settings.API_TITLE}",
        "version": settings.API_VERSION,
        "description": settings.API_DESCRIPTION,
        "endpoints": {
            "health": "/health",
            "adc_power": "/adc/power",
            "adc_budget": "/adc/budget",
            "adc_quantizer": "/adc/quantizer",
            "table2": "/experiments/table2",
            "sweep": "/experiments/sweep",
            "bound": "/experiments/bound",
            "khat": "/experiments/khat",
            "rip_probe": "/experiments/rip-probe"
        }
    }


@app.get("/health")
async def health_check():
    return {
        "status": "healthy",
        "service": settings.API_TITLE,
        "version": settings.API_VERSION
    }


if __name__ == "__main__":
    uvicorn.run(
        "main:app",
        host="0.0.0.0",
        port=8000,
        reload=True,
        log_level="info"
    )
