import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


class Settings:
    # API Configuration
    API_TITLE: str = os.getenv("API_TITLE", "Few-Bit Channel Estimation Studio")
    API_VERSION: str = os.getenv("API_VERSION", "1.0.0")
    API_DESCRIPTION: str = os.getenv(
        "API_DESCRIPTION",
        "Compressive channel estimation and ADC trade-off simulations for few-bit MIMO receivers",
    )
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")

    # ADC budget defaults
    WALDEN_C_J: float = float(os.getenv("WALDEN_C_J", "494e-15"))
    POWER_BUDGET_W: float = float(os.getenv("POWER_BUDGET_W", "0.02"))
    DURATION_S: float = float(os.getenv("DURATION_S", "100e-9"))
    TRAINING_LENGTH: int = int(os.getenv("TRAINING_LENGTH", "500"))

    # Simulation defaults
    MASTER_SEED: int = int(os.getenv("MASTER_SEED", "0"))
    OUTPUT_DIR: str = os.getenv("OUTPUT_DIR", "results")
    WORKERS: int = int(os.getenv("WORKERS", "1"))
    RIP_SAMPLES: int = int(os.getenv("RIP_SAMPLES", "200"))

    # BIHT defaults
    BIHT_TAU: float = float(os.getenv("BIHT_TAU", "1e-5"))
    BIHT_MAX_ITERS: int = int(os.getenv("BIHT_MAX_ITERS", "100"))
    BIHT_STALL_WINDOW: int = int(os.getenv("BIHT_STALL_WINDOW", "10"))


settings = Settings()
