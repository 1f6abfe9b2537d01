"""HTTP service: FastAPI app factory and request/response schemas."""

from .app import FIXTURES_ENV_VAR, app_from_env, create_app

__all__ = ["FIXTURES_ENV_VAR", "app_from_env", "create_app"]
