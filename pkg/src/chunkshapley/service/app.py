"""FastAPI service: the generator wire protocol plus core-package wrappers.

The protocol endpoints (/v1/score, /v1/generate, /v1/control-logits,
/v1/select) expose whatever Generator backs the app; in this repository
that is the deterministic stub, configured through a fixtures file. The
wrapper endpoints run attribution, metrics, labeling, and the inference
loop server-side for multi-client use.
"""

from __future__ import annotations

import math
import os

from fastapi import FastAPI, HTTPException

from ..errors import (
    CapabilityError,
    ChunkShapleyError,
    GameSizeError,
    LabelingError,
    MarkerCollisionError,
    ShortSelectionError,
    SizingError,
    StubFixtureMissing,
)
from ..game import (
    Coalition,
    SurrogateGame,
    TabulatedGame,
    Vote,
    exact_shapley_surrogate,
    exact_shapley_tabulated,
    surrogate_table,
)
from ..generator.base import Generator
from ..generator.stub import StubFixtures, StubGenerator
from ..inference import InferenceConfig, run as run_inference
from ..labeler import LabelerConfig, TaskInstance, label_instance, labels_row, training_rows
from ..metrics import edit_similarity, exact_match, levenshtein
from ..retrieval import Chunk
from ..serialization import PromptParts, kind_from_markers
from . import schemas

FIXTURES_ENV_VAR = "CHUNKSHAPLEY_FIXTURES"


def create_app(generator: Generator) -> FastAPI:
    app = FastAPI(title="chunkshapley", version="0.1.0")
    backend_name = type(generator).__name__

    def prompt_parts(payload: schemas.PromptPayload) -> PromptParts:
        try:
            kind = kind_from_markers(payload.markers, len(payload.evidence))
            return PromptParts(kind, payload.prefix, payload.suffix, tuple(payload.evidence))
        except (ValueError, MarkerCollisionError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

    def backend_errors(fn):
        try:
            return fn()
        except SizingError as exc:
            raise HTTPException(status_code=413, detail=str(exc)) from exc
        except CapabilityError as exc:
            raise HTTPException(status_code=501, detail=str(exc)) from exc
        except (StubFixtureMissing, ShortSelectionError) as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc

    @app.get("/healthz", response_model=schemas.HealthResponse)
    def healthz():
        return schemas.HealthResponse(status="ok", backend=backend_name)

    # --- generator wire protocol ------------------------------------------

    @app.post("/v1/score", response_model=schemas.ScoreResponse)
    def score(req: schemas.ScoreRequest):
        if not req.target:
            raise HTTPException(status_code=422, detail="target must be non-empty")
        parts = prompt_parts(req)
        result = backend_errors(lambda: generator.score(parts, req.target))
        return schemas.ScoreResponse(token_logprobs=list(result.token_logprobs))

    @app.post("/v1/generate", response_model=schemas.GenerateResponse)
    def generate(req: schemas.GenerateRequest):
        parts = prompt_parts(req)
        text = backend_errors(
            lambda: generator.generate(parts, req.max_new_tokens, tuple(req.stop))
        )
        return schemas.GenerateResponse(text=text)

    @app.post("/v1/control-logits", response_model=schemas.ControlLogitsResponse)
    def control_logits(req: schemas.PromptPayload):
        parts = prompt_parts(req)
        dist = backend_errors(lambda: generator.control_distribution(parts))
        # report log-probabilities; the client renormalizes over the pair
        need = math.log(dist.p_need) if dist.p_need > 0 else -1e9
        done = math.log(dist.p_done) if dist.p_done > 0 else -1e9
        return schemas.ControlLogitsResponse(
            control_logits=schemas.ControlLogits(need=need, done=done)
        )

    @app.post("/v1/select", response_model=schemas.SelectResponse)
    def select(req: schemas.PromptPayload):
        parts = prompt_parts(req)
        result = backend_errors(lambda: generator.select_tokens(parts, len(req.evidence)))
        return schemas.SelectResponse(text=result.raw)

    # --- core wrappers ------------------------------------------------------

    @app.post("/v1/game/solve", response_model=schemas.GameSolveResponse)
    def game_solve(req: schemas.GameSolveRequest):
        try:
            if (req.surrogate is None) == (req.values is None):
                raise ValueError("provide exactly one of: surrogate, values")
            if req.surrogate is not None:
                game = SurrogateGame(
                    req.surrogate.beta,
                    tuple(Vote(v.y, v.w) for v in req.surrogate.votes),
                )
                attr = exact_shapley_surrogate(game)
                grand = float(surrogate_table(game)[-1])
            else:
                tab = tabulated_from_members_map(req.values)
                attr = exact_shapley_tabulated(tab)
                grand = tab.values[-1]
        except (ValueError, GameSizeError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return schemas.GameSolveResponse(
            phi=list(attr.phi), efficiency_residual=attr.efficiency_residual, grand_value=grand
        )

    @app.post("/v1/metrics/similarity", response_model=schemas.SimilarityResponse)
    def similarity(req: schemas.SimilarityRequest):
        return schemas.SimilarityResponse(
            levenshtein=levenshtein(req.pred, req.ref),
            edit_similarity=edit_similarity(req.pred, req.ref),
            exact_match=exact_match(req.pred, req.ref, strict=req.strict_em),
        )

    @app.post("/v1/infer", response_model=schemas.InferResponse)
    def infer(req: schemas.InferRequest):
        try:
            config = InferenceConfig.from_dict(req.config)
            pool = [Chunk.make(c.path, c.start, c.end, c.text) for c in req.chunks]
        except (ValueError, MarkerCollisionError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        completion, trace = backend_errors(
            lambda: run_inference(generator, pool, req.prefix, req.suffix, config)
        )
        return schemas.InferResponse(completion=completion, trace=trace.to_dict())

    @app.post("/v1/label", response_model=schemas.LabelResponse)
    def label(req: schemas.LabelRequest):
        try:
            config = LabelerConfig.from_dict(req.config)
            chunks = tuple(
                Chunk.make(c.path, c.start, c.end, c.text, retrieval_rank=i)
                for i, c in enumerate(req.instance.chunks, start=1)
            )
            instance = TaskInstance(
                req.instance.instance_id,
                req.instance.repo_id,
                req.instance.prefix,
                req.instance.suffix,
                req.instance.target,
                chunks,
            )
        except (ValueError, MarkerCollisionError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        try:
            result = backend_errors(lambda: label_instance(instance, generator, config))
        except LabelingError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        if result.status == "discarded":
            return schemas.LabelResponse(status="discarded", discard_reason=result.discard_reason)
        return schemas.LabelResponse(
            status="labeled",
            label=labels_row(result),
            training=training_rows(result, config),
        )

    return app


def tabulated_from_members_map(values: dict[str, float]) -> TabulatedGame:
    """Build a TabulatedGame from {"": v0, "1": v1, "1,2": v12, ...} member lists."""
    n = len(values)
    if n == 0 or n & (n - 1):
        raise ValueError(f"need all 2^K coalition values, got {n} entries")
    k = n.bit_length() - 1
    table = [None] * n
    for key, val in values.items():
        members = [int(x) for x in key.replace(" ", "").split(",") if x != ""]
        mask = Coalition.from_members(members).mask
        if mask >= n:
            raise ValueError(f"coalition {key!r} is out of range for K={k}")
        if table[mask] is not None:
            raise ValueError(f"duplicate coalition entry {key!r}")
        table[mask] = float(val)
    return TabulatedGame(k, tuple(table))


def app_from_env() -> FastAPI:
    """App factory for `uvicorn chunkshapley.service.app:app_from_env --factory`."""
    path = os.environ.get(FIXTURES_ENV_VAR)
    if not path:
        raise RuntimeError(f"set {FIXTURES_ENV_VAR} to a stub fixtures file")
    return create_app(StubGenerator(StubFixtures.load(path)))
