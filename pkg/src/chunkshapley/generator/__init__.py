"""Generator backends: the abstract interface, the deterministic stub, and the HTTP client."""

from .base import (
    ControlDistribution,
    EMPTY_SELECTION,
    Generator,
    SelectionResult,
    parse_selection_stream,
    truncate_at_stop,
)
from .http import ENDPOINT_ENV_VAR, HttpGenerator, endpoint_from_env
from .stub import StubFixtures, StubGenerator

__all__ = [
    "ControlDistribution",
    "EMPTY_SELECTION",
    "ENDPOINT_ENV_VAR",
    "Generator",
    "HttpGenerator",
    "SelectionResult",
    "StubFixtures",
    "StubGenerator",
    "endpoint_from_env",
    "parse_selection_stream",
    "truncate_at_stop",
]
