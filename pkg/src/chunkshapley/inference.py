"""Online retrieval-control loop: trigger -> retrieve -> select -> decode.

One pass against the backend. The DONE path decodes directly from the
in-file context (one decode, no retrieval); the NEED path retrieves top-k
candidates, obtains per-chunk KEEP/DROP decisions in a single selection
call, and decodes with the kept evidence. An empty kept set still decodes
with an empty pack unless the fallback flag is set.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

from .generator.base import Generator
from .retrieval import Chunk, Query, retrieve_topk
from .serialization import PromptKind, PromptParts

NEED = "NEED"
DONE = "DONE"


@dataclass(frozen=True)
class InferenceConfig:
    t_c: float = 0.5
    k: int = 10
    window: int = 20
    stride: int = 10
    max_new_tokens: int = 256
    stop: tuple[str, ...] = ()
    done_fallback_on_empty_selection: bool = False
    include_suffix_in_query: bool = False

    def __post_init__(self):
        if not 0.0 <= self.t_c <= 1.0:
            raise ValueError(f"t_c must be in [0, 1], got {self.t_c}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        object.__setattr__(self, "stop", tuple(self.stop))

    def as_dict(self) -> dict:
        return {
            "t_c": self.t_c,
            "k": self.k,
            "window": self.window,
            "stride": self.stride,
            "max_new_tokens": self.max_new_tokens,
            "stop": list(self.stop),
            "done_fallback_on_empty_selection": self.done_fallback_on_empty_selection,
            "include_suffix_in_query": self.include_suffix_in_query,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "InferenceConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "stop" in kwargs:
            kwargs["stop"] = tuple(kwargs["stop"])
        return cls(**kwargs)


@dataclass
class InferenceTrace:
    """Audit record of one run; retrieval/selection fields exist only when executed."""

    trigger: str
    p_need: float
    completion: str = ""
    retrieved: list[str] | None = None
    selection: list[str] | None = None
    coerced_positions: list[int] | None = None
    kept: list[int] | None = None
    zero_candidates: bool = False
    durations: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "trigger": self.trigger,
            "p_need": self.p_need,
            "completion": self.completion,
            "durations": self.durations,
        }
        if self.retrieved is not None:
            out["retrieved"] = self.retrieved
            out["selection"] = self.selection
            out["coerced_positions"] = self.coerced_positions
            out["kept"] = self.kept
            out["zero_candidates"] = self.zero_candidates
        return out


def decide(gen: Generator, prefix: str, suffix: str, t_c: float) -> tuple[str, float]:
    """Trigger decision: NEED iff p_need >= t_c (boundary inclusive)."""
    dist = gen.control_distribution(PromptParts(PromptKind.CONTROL, prefix, suffix))
    return (NEED if dist.p_need >= t_c else DONE), dist.p_need


def run(
    gen: Generator,
    pool: Sequence[Chunk],
    prefix: str,
    suffix: str,
    config: InferenceConfig = InferenceConfig(),
) -> tuple[str, InferenceTrace]:
    """One completion with retrieval control; returns the text and its trace."""
    t0 = time.perf_counter()
    trigger, p_need = decide(gen, prefix, suffix, config.t_c)
    trace = InferenceTrace(trigger, p_need)
    trace.durations["trigger"] = time.perf_counter() - t0

    if trigger == DONE:
        t1 = time.perf_counter()
        completion = gen.generate(
            PromptParts(PromptKind.NO_EVIDENCE, prefix, suffix),
            config.max_new_tokens,
            config.stop,
        )
        trace.durations["decode"] = time.perf_counter() - t1
        trace.completion = completion
        return completion, trace

    t1 = time.perf_counter()
    query = Query.from_context(
        prefix, config.window, suffix, include_suffix=config.include_suffix_in_query
    )
    retrieved = retrieve_topk(query, pool, config.k) if pool else []
    trace.retrieved = [c.chunk_id for c in retrieved]
    trace.zero_candidates = not retrieved
    trace.durations["retrieve"] = time.perf_counter() - t1

    t2 = time.perf_counter()
    texts = tuple(c.text for c in retrieved)
    selection = gen.select_tokens(
        PromptParts(PromptKind.SELECTION, prefix, suffix, texts), len(retrieved)
    )
    trace.selection = list(selection.decisions)
    trace.coerced_positions = list(selection.coerced_positions)
    kept = [i for i, d in enumerate(selection.decisions, start=1) if d == "KEEP"]
    trace.kept = kept
    trace.durations["select"] = time.perf_counter() - t2

    t3 = time.perf_counter()
    if not kept and config.done_fallback_on_empty_selection:
        parts = PromptParts(PromptKind.NO_EVIDENCE, prefix, suffix)
    else:
        kept_texts = tuple(texts[i - 1] for i in kept)
        parts = PromptParts(PromptKind.WITH_EVIDENCE, prefix, suffix, kept_texts)
    completion = gen.generate(parts, config.max_new_tokens, config.stop)
    trace.durations["decode"] = time.perf_counter() - t3
    trace.completion = completion
    return completion, trace
