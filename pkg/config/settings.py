from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    FIBRIL_OUTPUT_DIR: str = "runs"
    FIBRIL_THREADS: int = 1
    FIBRIL_LOG_LEVEL: str = "INFO"
    FIBRIL_MASTER_SEED: int = 2024

    # ||K C 1 - 1||_inf above this forces a fresh factorization
    FIBRIL_RESIDUAL_TOL: float = 1e-6

    class Config:
        env_file = ".env"
        extra = "ignore"


settings = Settings()
