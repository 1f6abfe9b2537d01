"""Offline label construction: probe, surrogate game, exact Shapley,
bounded verification, retrieval-control labels, and training serialization.

Per instance the generator budget is exactly K+1 scoring calls (baseline
plus one per chunk) and one greedy decode per candidate-pool entry; the
empty coalition is always a pool entry, so the closed-book decode is never
issued separately.
"""

from __future__ import annotations

import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ChunkShapleyError, LabelingError
from .game import (
    Coalition,
    EMPTY_COALITION,
    SurrogateGame,
    Vote,
    exact_shapley_surrogate,
    rank_descending,
)
from .generator.base import Generator
from .metrics import delta_effect, edit_similarity, exact_match, normalized_loglik
from .retrieval import Chunk
from .serialization import (
    F1,
    F2,
    NO_RETRIEVAL,
    PromptKind,
    PromptParts,
    TrainingInstance,
    build_f1_stream,
    build_f2_stream,
    build_no_retrieval_stream,
)

NEED_LABEL = "NEED"
DONE_LABEL = "DONE"

PROV_EMPTY = "empty-baseline"
PROV_SHAPLEY_PREFIX = "shapley-prefix"
PROV_DELTA_PREFIX = "delta-prefix"
PROV_COMBO2 = "combo2"
PROV_COMBO3 = "combo3"


@dataclass(frozen=True)
class LabelerConfig:
    """Pipeline knobs; paper-default values, echoed into every output row."""

    beta: float = 1.0
    n_v: int | None = None  # Shapley-prefix count; None means "all K"
    n_delta_prefix: int = 3
    top_l: int = 3
    eps: float = 0.0
    tau_es: float = 60.0
    max_new_tokens: int = 256
    stop: tuple[str, ...] = ()
    strict_em: bool = False
    r_star_rule: str = "margin"  # "margin" | "tau-done"
    tau_done: float = 100.0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if self.r_star_rule not in ("margin", "tau-done"):
            raise ValueError(f"unknown retrieval-control rule {self.r_star_rule!r}")
        object.__setattr__(self, "stop", tuple(self.stop))

    def as_dict(self) -> dict:
        return {
            "beta": self.beta,
            "n_v": self.n_v,
            "n_delta_prefix": self.n_delta_prefix,
            "top_l": self.top_l,
            "eps": self.eps,
            "tau_es": self.tau_es,
            "max_new_tokens": self.max_new_tokens,
            "stop": list(self.stop),
            "strict_em": self.strict_em,
            "r_star_rule": self.r_star_rule,
            "tau_done": self.tau_done,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LabelerConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "stop" in kwargs:
            kwargs["stop"] = tuple(kwargs["stop"])
        return cls(**kwargs)


@dataclass(frozen=True)
class TaskInstance:
    """One labeling task: in-file context, target span, and the retrieved chunks."""

    instance_id: str
    repo_id: str
    prefix: str
    suffix: str
    target: str
    chunks: tuple[Chunk, ...]

    def __post_init__(self):
        if not self.target:
            raise ValueError("target span must be non-empty")
        if not self.chunks:
            raise ValueError("instance carries no retrieved chunks")
        ranks = [c.retrieval_rank for c in self.chunks]
        if ranks != list(range(1, len(self.chunks) + 1)):
            raise ValueError(f"chunk ranks must be 1..K in order, got {ranks}")
        object.__setattr__(self, "chunks", tuple(self.chunks))

    @property
    def k(self) -> int:
        return len(self.chunks)

    @classmethod
    def from_record(cls, record: dict, default_id: str) -> "TaskInstance":
        chunks = tuple(
            Chunk.make(
                c.get("path", ""), c.get("start", 0), c.get("end", 0), c["text"],
                retrieval_rank=i,
            )
            for i, c in enumerate(record["chunks"], start=1)
        )
        return cls(
            instance_id=str(record.get("instance_id", default_id)),
            repo_id=record.get("repo_id", ""),
            prefix=record["prefix"],
            suffix=record["suffix"],
            target=record["target"],
            chunks=chunks,
        )


@dataclass(frozen=True)
class ChunkProbe:
    ell: float
    delta: float
    vote: Vote


@dataclass(frozen=True)
class ProbeResult:
    ell_base: float
    per_chunk: tuple[ChunkProbe, ...]

    @property
    def deltas(self) -> tuple[float, ...]:
        return tuple(p.delta for p in self.per_chunk)

    @property
    def votes(self) -> tuple[Vote, ...]:
        return tuple(p.vote for p in self.per_chunk)


def coalition_prompt(instance: TaskInstance, coalition: Coalition) -> PromptParts:
    """Decode/score prompt for a coalition: packed evidence, or closed-book for empty."""
    if coalition.mask == 0:
        return PromptParts(PromptKind.NO_EVIDENCE, instance.prefix, instance.suffix)
    texts = tuple(instance.chunks[i - 1].text for i in coalition.members)
    return PromptParts(PromptKind.WITH_EVIDENCE, instance.prefix, instance.suffix, texts)


def probe(instance: TaskInstance, gen: Generator) -> ProbeResult:
    """Score the closed-book baseline and each chunk in isolation (K+1 calls)."""
    ell_base = normalized_loglik(gen.score(coalition_prompt(instance, EMPTY_COALITION), instance.target))
    per_chunk = []
    for i in range(1, instance.k + 1):
        parts = coalition_prompt(instance, Coalition.from_members([i]))
        ell = normalized_loglik(gen.score(parts, instance.target))
        per_chunk.append(ChunkProbe(ell, ell - ell_base, delta_effect(ell, ell_base)))
    return ProbeResult(ell_base, tuple(per_chunk))


def build_surrogate(probe_result: ProbeResult, beta: float) -> SurrogateGame:
    """Surrogate game with votes in retrieval order."""
    return SurrogateGame(beta, probe_result.votes)


@dataclass(frozen=True)
class PoolEntry:
    coalition: Coalition
    provenance: str


@dataclass(frozen=True)
class CandidatePool:
    entries: tuple[PoolEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def coalitions(self) -> tuple[Coalition, ...]:
        return tuple(e.coalition for e in self.entries)


def build_pool(
    phi_rank: Sequence[int],
    delta_rank: Sequence[int],
    n_v: int,
    n_delta_prefix: int,
    top_l: int,
) -> CandidatePool:
    """Verification pool: empty set, Shapley prefixes, delta prefixes, and
    size-2/3 combinations among the top-L chunks by delta.

    Deduplicated with first occurrence winning, in that order, so the pool
    size is at most 1 + n_v + n_delta_prefix + C(L,2) + C(L,3).
    """
    k = len(phi_rank)
    if len(delta_rank) != k:
        raise ValueError("rank permutations disagree on K")
    if sorted(phi_rank) != list(range(1, k + 1)) or sorted(delta_rank) != list(range(1, k + 1)):
        raise ValueError("ranks must be permutations of 1..K")
    if not 0 <= n_v <= k:
        raise ValueError(f"n_v must be in [0, {k}], got {n_v}")
    if not 0 <= top_l <= k:
        raise ValueError(f"top_l must be in [0, {k}], got {top_l}")

    entries: list[PoolEntry] = []
    seen: set[int] = set()

    def add(members: Iterable[int], provenance: str) -> None:
        c = Coalition.from_members(members)
        if c.mask not in seen:
            seen.add(c.mask)
            entries.append(PoolEntry(c, provenance))

    add((), PROV_EMPTY)
    for n in range(1, n_v + 1):
        add(phi_rank[:n], PROV_SHAPLEY_PREFIX)
    for n in range(1, min(n_delta_prefix, k) + 1):
        add(delta_rank[:n], PROV_DELTA_PREFIX)
    head = list(delta_rank[:top_l])
    for pair in itertools.combinations(head, 2):
        add(pair, PROV_COMBO2)
    for triple in itertools.combinations(head, 3):
        add(triple, PROV_COMBO3)
    return CandidatePool(tuple(entries))


@dataclass(frozen=True)
class DecodeRecord:
    coalition: Coalition
    provenance: str
    text: str
    es: float
    em: int


def select_winner(records: Sequence[DecodeRecord]) -> DecodeRecord:
    """Lexicographic (ES, EM) maximum; ties prefer the smaller coalition,
    then the earlier record, so the outcome is deterministic."""
    best = records[0]
    for rec in records[1:]:
        if (rec.es, rec.em, -len(rec.coalition)) > (best.es, best.em, -len(best.coalition)):
            best = rec
    return best


def verify(
    instance: TaskInstance,
    pool: CandidatePool,
    gen: Generator,
    config: LabelerConfig,
) -> tuple[Coalition, tuple[DecodeRecord, ...]]:
    """Greedy-decode every pool entry; pick the lexicographic (ES, EM) winner."""
    if not pool.entries:
        raise ValueError("verification pool is empty")
    records: list[DecodeRecord] = []
    for entry in pool.entries:
        text = gen.generate(
            coalition_prompt(instance, entry.coalition), config.max_new_tokens, config.stop
        )
        records.append(
            DecodeRecord(
                entry.coalition,
                entry.provenance,
                text,
                edit_similarity(text, instance.target),
                exact_match(text, instance.target, strict=config.strict_em),
            )
        )
    return select_winner(records).coalition, tuple(records)


def retrieval_control(es_star: float, es_empty: float, eps: float) -> str:
    """DONE iff the verified coalition gains at most eps over the closed book."""
    return DONE_LABEL if es_star - es_empty <= eps else NEED_LABEL


def retrieval_control_tau_done(
    es_star: float, es_empty: float, eps: float, tau_done: float
) -> str:
    """Variant rule: DONE also when the closed book alone already clears tau_done."""
    if es_empty >= tau_done:
        return DONE_LABEL
    return retrieval_control(es_star, es_empty, eps)


def quality_gate(es_star: float, tau_es: float) -> bool:
    """Keep the instance iff the verified coalition reaches tau_es (strict < discards)."""
    return not es_star < tau_es


@dataclass(frozen=True)
class VerifiedLabel:
    s_star: Coalition
    r_star: str
    q: tuple[str, ...]  # "KEEP"/"DROP" per chunk, 1..K
    decodes: tuple[DecodeRecord, ...]
    es_star: float
    es_empty: float


def serialize(instance: TaskInstance, label: VerifiedLabel, fmt: str) -> TrainingInstance:
    """Serialize one training view; format must agree with the retrieval label."""
    if fmt in (F1, F2) and label.r_star != NEED_LABEL:
        raise ValueError(f"{fmt} requires a NEED label, got {label.r_star}")
    if fmt == NO_RETRIEVAL and label.r_star != DONE_LABEL:
        raise ValueError("NO_RETRIEVAL requires a DONE label")
    if fmt == F1:
        return build_f1_stream(
            instance.prefix, instance.suffix, [c.text for c in instance.chunks], label.q
        )
    if fmt == F2:
        kept = [instance.chunks[i - 1].text for i in label.s_star.members]
        if not kept:
            raise ValueError("generation format requires a non-empty verified coalition")
        return build_f2_stream(instance.prefix, instance.suffix, kept, instance.target)
    if fmt == NO_RETRIEVAL:
        return build_no_retrieval_stream(instance.prefix, instance.suffix, instance.target)
    raise ValueError(f"unknown training format {fmt!r}")


@dataclass(frozen=True)
class LabelResult:
    """Outcome for one instance: labeled (with training views) or discarded."""

    instance_id: str
    status: str  # "labeled" | "discarded"
    label: VerifiedLabel | None
    training: tuple[TrainingInstance, ...]
    probe_result: ProbeResult
    phi: tuple[float, ...]
    pool: CandidatePool
    discard_reason: str | None = None


def label_instance(instance: TaskInstance, gen: Generator, config: LabelerConfig) -> LabelResult:
    """Run the full pipeline for one instance.

    NEED instances emit both training views (selection and generation);
    DONE instances emit the no-retrieval view. Downstream trainers can
    subsample formats; emitting both keeps the output deterministic and
    lossless.
    """

    def stage(name, fn, *args):
        try:
            return fn(*args)
        except ChunkShapleyError as exc:
            raise LabelingError(instance.instance_id, name, str(exc)) from exc

    probe_result = stage("probe", probe, instance, gen)
    game = build_surrogate(probe_result, config.beta)
    attribution = stage("shapley", exact_shapley_surrogate, game)
    phi_rank = rank_descending(attribution.phi)
    delta_rank = rank_descending(probe_result.deltas)
    n_v = instance.k if config.n_v is None else min(config.n_v, instance.k)
    pool = build_pool(phi_rank, delta_rank, n_v, config.n_delta_prefix, min(config.top_l, instance.k))
    s_star, records = stage("verify", verify, instance, pool, gen, config)

    by_mask = {r.coalition.mask: r for r in records}
    es_star = by_mask[s_star.mask].es
    es_empty = by_mask[0].es

    if not quality_gate(es_star, config.tau_es):
        return LabelResult(
            instance.instance_id, "discarded", None, (), probe_result,
            attribution.phi, pool, discard_reason="below-tau-es",
        )

    if config.r_star_rule == "tau-done":
        r_star = retrieval_control_tau_done(es_star, es_empty, config.eps, config.tau_done)
    else:
        r_star = retrieval_control(es_star, es_empty, config.eps)
    q = tuple("KEEP" if i in s_star else "DROP" for i in range(1, instance.k + 1))
    label = VerifiedLabel(s_star, r_star, q, records, es_star, es_empty)

    if r_star == NEED_LABEL:
        training = (serialize(instance, label, F1), serialize(instance, label, F2))
    else:
        training = (serialize(instance, label, NO_RETRIEVAL),)
    return LabelResult(
        instance.instance_id, "labeled", label, training, probe_result, attribution.phi, pool
    )


@dataclass(frozen=True)
class FailedInstance:
    instance_id: str
    stage: str
    message: str


def label_batch(
    instances: Sequence[TaskInstance],
    gen: Generator,
    config: LabelerConfig,
    jobs: int = 1,
) -> list[LabelResult | FailedInstance]:
    """Label instances independently; failures are recorded, not raised.

    Results come back in input order regardless of the worker count, so
    batch outputs stay byte-stable.
    """

    def one(instance: TaskInstance):
        try:
            return label_instance(instance, gen, config)
        except LabelingError as exc:
            return FailedInstance(exc.instance_id, exc.stage, str(exc))

    if jobs <= 1:
        return [one(i) for i in instances]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, instances))


# --- JSONL external interfaces ------------------------------------------------


def read_instances(path) -> list[TaskInstance]:
    instances = []
    with open(path, "r", encoding="utf-8") as fh:
        for idx, line in enumerate(fh):
            line = line.strip()
            if line:
                instances.append(TaskInstance.from_record(json.loads(line), default_id=str(idx)))
    return instances


def labels_row(result: LabelResult) -> dict:
    label = result.label
    assert label is not None
    return {
        "instance_id": result.instance_id,
        "s_star": list(label.s_star.members),
        "r_star": label.r_star,
        "q": list(label.q),
        "es_star": label.es_star,
        "es_empty": label.es_empty,
        "phi": list(result.phi),
        "delta": list(result.probe_result.deltas),
        "pool_provenance": [e.provenance for e in result.pool.entries],
    }


def training_rows(result: LabelResult, config: LabelerConfig) -> list[dict]:
    echo = config.as_dict()
    return [
        {
            "instance_id": result.instance_id,
            "format": t.format,
            "token_stream": t.token_stream,
            "loss_mask_spans": [list(span) for span in t.loss_mask_spans],
            "config_echo": echo,
        }
        for t in result.training
    ]
