"""Pydantic request/response models for the HTTP service.

The four backend-protocol endpoints share one prompt payload shape; the
wrapper endpoints (game solving, labeling, inference, metrics) carry
their own request bodies.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class PromptPayload(BaseModel):
    prefix: str
    suffix: str
    evidence: list[str] = Field(default_factory=list)
    markers: list[str]


class ScoreRequest(PromptPayload):
    target: str


class ScoreResponse(BaseModel):
    token_logprobs: list[float]


class GenerateRequest(PromptPayload):
    max_new_tokens: int = 256
    stop: list[str] = Field(default_factory=list)


class GenerateResponse(BaseModel):
    text: str


class ControlLogits(BaseModel):
    need: float
    done: float


class ControlLogitsResponse(BaseModel):
    control_logits: ControlLogits


class SelectResponse(BaseModel):
    text: str


class HealthResponse(BaseModel):
    status: str
    backend: str


# --- game solving -------------------------------------------------------------


class VotePayload(BaseModel):
    y: int
    w: float


class SurrogatePayload(BaseModel):
    beta: float
    votes: list[VotePayload]


class GameSolveRequest(BaseModel):
    surrogate: SurrogatePayload | None = None
    values: dict[str, float] | None = None  # tabulated: "1,3" -> utility


class GameSolveResponse(BaseModel):
    phi: list[float]
    efficiency_residual: float
    grand_value: float


# --- metrics ------------------------------------------------------------------


class SimilarityRequest(BaseModel):
    pred: str
    ref: str
    strict_em: bool = False


class SimilarityResponse(BaseModel):
    levenshtein: int
    edit_similarity: float
    exact_match: int


# --- inference ------------------------------------------------------------------


class ChunkPayload(BaseModel):
    path: str = ""
    start: int = 0
    end: int = 0
    text: str


class InferRequest(BaseModel):
    prefix: str
    suffix: str
    chunks: list[ChunkPayload] = Field(default_factory=list)
    config: dict = Field(default_factory=dict)


class InferResponse(BaseModel):
    completion: str
    trace: dict


# --- labeling -------------------------------------------------------------------


class InstancePayload(BaseModel):
    instance_id: str = "0"
    repo_id: str = ""
    prefix: str
    suffix: str
    target: str
    chunks: list[ChunkPayload]


class LabelRequest(BaseModel):
    instance: InstancePayload
    config: dict = Field(default_factory=dict)


class LabelResponse(BaseModel):
    status: str  # "labeled" | "discarded"
    label: dict | None = None
    training: list[dict] | None = None
    discard_reason: str | None = None
