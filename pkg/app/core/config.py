from pydantic_settings import BaseSettings
from pydantic import Field

class Settings(BaseSettings):
    PROJECT_NAME: str = "RePnP"

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "%(asctime)s %(levelname)s %(name)s: %(message)s"

    # Compute
    JOBS: int = Field(0, description="Per-image worker threads, 0 = all cores")
    TORCH_THREADS: int = 0

    # Paths
    OUTPUT_DIR: str = "runs"
    DATA_DIR: str = "data"
    CHECKPOINT_PATH: str = Field("", validation_alias="REPNP_CHECKPOINT")

    DEFAULT_SEED: int = 0

    # HTTP service
    SERVICE_MAX_PIXELS: int = 1024 * 1024
    SERVICE_PNP_ITERATIONS: int = 30

    @property
    def effective_jobs(self) -> int:
        import os
        return self.JOBS if self.JOBS > 0 else (os.cpu_count() or 1)

    class Config:
        env_file = ".env"
        env_prefix = "REPNP_"
        extra = "ignore"


settings = Settings()
