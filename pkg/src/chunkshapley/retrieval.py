"""Sliding-window chunking of the cross-file pool and Jaccard top-K retrieval.

Tokens are maximal runs of word characters (letters, digits, underscore),
so snake_case identifiers stay whole. Ties in retrieval score break by
(source_path, start_line) so results are independent of pool order.
"""

from __future__ import annotations

import heapq
import json
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

_TOKEN_RE = re.compile(r"\w+")

DEFAULT_WINDOW = 20
DEFAULT_STRIDE = 10


def tokenize(text: str) -> frozenset[str]:
    """Split on every non-alphanumeric, non-underscore character; set semantics."""
    return frozenset(_TOKEN_RE.findall(text))


def jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    """|a & b| / |a | b|; two empty sets score 0."""
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


@dataclass(frozen=True)
class Chunk:
    """A cross-file code window with provenance; lines are 1-based inclusive."""

    source_path: str
    start_line: int
    end_line: int
    text: str
    token_set: frozenset[str]
    retrieval_rank: int | None = None

    @classmethod
    def make(
        cls, source_path: str, start_line: int, end_line: int, text: str,
        retrieval_rank: int | None = None,
    ) -> "Chunk":
        return cls(source_path, start_line, end_line, text, tokenize(text), retrieval_rank)

    @property
    def chunk_id(self) -> str:
        return f"{self.source_path}:{self.start_line}-{self.end_line}"


def chunkize(file_text: str, window: int, stride: int, source_path: str = "") -> list[Chunk]:
    """Windows start at lines 1, 1+stride, ...; a final partial window is kept."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if not 1 <= stride <= window:
        raise ValueError(f"stride must be in [1, window], got {stride}")
    lines = file_text.splitlines()
    chunks = []
    for start in range(1, len(lines) + 1, stride):
        body = lines[start - 1 : start - 1 + window]
        end = start + len(body) - 1
        chunks.append(Chunk.make(source_path, start, end, "\n".join(body)))
    return chunks


def chunkize_files(
    files: Iterable[tuple[str, str]], window: int = DEFAULT_WINDOW, stride: int = DEFAULT_STRIDE
) -> list[Chunk]:
    """Chunk every (path, text) pair into one flat pool."""
    pool: list[Chunk] = []
    for path, text in files:
        pool.extend(chunkize(text, window, stride, source_path=path))
    return pool


@dataclass(frozen=True)
class Query:
    """Retrieval query: the trailing window of the in-file prefix."""

    text: str
    token_set: frozenset[str]

    @classmethod
    def from_context(
        cls,
        prefix: str,
        window: int,
        suffix: str = "",
        include_suffix: bool = False,
    ) -> "Query":
        """Last `window` prefix lines; optionally also the first `window` suffix lines."""
        parts = ["\n".join(prefix.splitlines()[-window:])]
        if include_suffix and suffix:
            parts.append("\n".join(suffix.splitlines()[:window]))
        text = "\n".join(p for p in parts if p)
        return cls(text, tokenize(text))


def retrieve_topk(query: Query, pool: Sequence[Chunk], k: int) -> list[Chunk]:
    """Top-k chunks by Jaccard score, ranks 1..n assigned on the result.

    Deterministic total order: score descending, then source_path and
    start_line ascending. A pool smaller than k returns everything.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    selected = heapq.nsmallest(
        k,
        pool,
        key=lambda c: (-jaccard(query.token_set, c.token_set), c.source_path, c.start_line),
    )
    return [replace(c, retrieval_rank=i) for i, c in enumerate(selected, start=1)]


# --- chunk index persistence (token sets recomputed on load) ----------------


def save_chunks(chunks: Iterable[Chunk], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for c in chunks:
            fh.write(
                json.dumps(
                    {"path": c.source_path, "start": c.start_line, "end": c.end_line, "text": c.text}
                )
                + "\n"
            )
            n += 1
    return n


def load_chunks(path: str | Path) -> list[Chunk]:
    chunks = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            chunks.append(Chunk.make(row["path"], row["start"], row["end"], row["text"]))
    return chunks
