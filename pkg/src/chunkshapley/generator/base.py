"""Generator interface: teacher-forced scoring, greedy decoding, control tokens.

Backends implement four operations against serialized prompts. Decoding is
greedy-only; determinism is asserted on the stub and best-effort documented
for remote backends.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass

from ..errors import ShortSelectionError
from ..metrics import LikelihoodScore
from ..serialization import DONE, DROP, KEEP, PromptParts


@dataclass(frozen=True)
class ControlDistribution:
    """Two-way softmax over the retrieval-control tokens."""

    p_need: float
    p_done: float

    @classmethod
    def from_logits(cls, need: float, done: float) -> "ControlDistribution":
        # logistic of the logit difference; saturates cleanly at extreme values
        d = need - done
        if d >= 0:
            e = math.exp(-d)
            p = 1.0 / (1.0 + e)
        else:
            e = math.exp(d)
            p = e / (1.0 + e)
        return cls(p, 1.0 - p)


@dataclass(frozen=True)
class SelectionResult:
    """Per-chunk KEEP/DROP decisions plus positions where stray output was coerced."""

    decisions: tuple[str, ...]
    coerced_positions: tuple[int, ...]  # 1-based
    raw: str


EMPTY_SELECTION = SelectionResult((), (), "")


def parse_selection_stream(text: str, k: int) -> SelectionResult:
    """Parse k decisions from a raw selection stream.

    Any emitted token other than the two selection markers is coerced to
    DROP (keeping garbage degrades worse than dropping evidence) and its
    position recorded. A DONE marker ends the stream early; fewer than k
    decisions raises ShortSelectionError with the partial result attached.
    """
    decisions: list[str] = []
    coerced: list[int] = []
    pos = 0
    while pos < len(text) and len(decisions) < k:
        if text.startswith(KEEP, pos):
            decisions.append("KEEP")
            pos += len(KEEP)
        elif text.startswith(DROP, pos):
            decisions.append("DROP")
            pos += len(DROP)
        elif text.startswith(DONE, pos):
            break
        else:
            nxt = len(text)
            for marker in (KEEP, DROP, DONE):
                idx = text.find(marker, pos)
                if idx != -1:
                    nxt = min(nxt, idx)
            decisions.append("DROP")
            coerced.append(len(decisions))
            pos = nxt
    result = SelectionResult(tuple(decisions), tuple(coerced), text)
    if len(decisions) < k:
        raise ShortSelectionError(k, result)
    return result


def truncate_at_stop(text: str, stop: tuple[str, ...]) -> str:
    """Cut the decode at the earliest occurrence of any stop string."""
    cut = len(text)
    for s in stop:
        if s:
            idx = text.find(s)
            if idx != -1:
                cut = min(cut, idx)
    return text[:cut]


class Generator(abc.ABC):
    """A completion backend reachable through scoring/decoding/control operations."""

    @abc.abstractmethod
    def score(self, parts: PromptParts, target: str) -> LikelihoodScore:
        """Teacher-forced per-token logprobs of target given the serialized context.

        Left-truncation applies to input-side content only; the target is
        never truncated.
        """

    @abc.abstractmethod
    def generate(self, parts: PromptParts, max_new_tokens: int, stop: tuple[str, ...] = ()) -> str:
        """Greedy decode, truncated at the first stop string."""

    @abc.abstractmethod
    def control_distribution(self, parts: PromptParts) -> ControlDistribution:
        """Softmax over the two retrieval-control tokens at the next position."""

    def select_tokens(self, parts: PromptParts, k: int) -> SelectionResult:
        """Emit k KEEP/DROP decisions for the packed candidates."""
        if k == 0:
            return EMPTY_SELECTION
        return self._select(parts, k)

    @abc.abstractmethod
    def _select(self, parts: PromptParts, k: int) -> SelectionResult:
        ...
