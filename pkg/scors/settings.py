from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # Default directory for experiment artifacts (SCORS_OUTPUT_DIR)
    OUTPUT_DIR: str = "scors_runs"

    model_config = SettingsConfigDict(env_prefix="SCORS_")


settings = Settings()
