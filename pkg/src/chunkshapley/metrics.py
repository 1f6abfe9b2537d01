"""Completion-quality metrics and likelihood arithmetic.

Edit similarity follows the usual lineage: character-level Levenshtein
distance normalized by the longer string, scaled to a percentage. Exact
match compares whitespace-stripped strings by default because decoded
completions carry trailing newlines from stop conditions; pass
strict=True for raw equality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import BackendDataError
from .game import Vote


def levenshtein(a: str, b: str) -> int:
    """Unit-cost character edit distance, via Myers' bit-parallel algorithm.

    Bit vectors are plain Python ints, so patterns of any length work
    (one big-int word per text character instead of the O(len(a)*len(b))
    dynamic program).
    """
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    if len(a) > len(b):
        a, b = b, a

    m = len(a)
    full = (1 << m) - 1
    last = 1 << (m - 1)
    peq: dict[str, int] = {}
    for i, ch in enumerate(a):
        peq[ch] = peq.get(ch, 0) | (1 << i)

    pv = full
    mv = 0
    score = m
    for ch in b:
        eq = peq.get(ch, 0)
        xv = eq | mv
        xh = (((eq & pv) + pv) ^ pv) | eq
        ph = mv | (full & ~(xh | pv))
        mh = pv & xh
        if ph & last:
            score += 1
        elif mh & last:
            score -= 1
        ph = ((ph << 1) | 1) & full
        mh = (mh << 1) & full
        pv = mh | (full & ~(xv | ph))
        mv = ph & xv
    return score


def edit_similarity(pred: str, ref: str) -> float:
    """Percentage similarity: 100 * (1 - distance / max length).

    Two empty strings are identical, so the 0/0 case scores 100.
    """
    if not pred and not ref:
        return 100.0
    return 100.0 * (1.0 - levenshtein(pred, ref) / max(len(pred), len(ref)))


def exact_match(pred: str, ref: str, strict: bool = False) -> int:
    """1 iff the strings match; stripped comparison unless strict."""
    if strict:
        return int(pred == ref)
    return int(pred.strip() == ref.strip())


@dataclass(frozen=True)
class LikelihoodScore:
    """Per-token log-probabilities (nats) of a teacher-forced target."""

    token_logprobs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "token_logprobs", tuple(float(x) for x in self.token_logprobs))
        if not self.token_logprobs:
            raise ValueError("a scored target has at least one token")
        if any(not math.isfinite(x) for x in self.token_logprobs):
            raise BackendDataError("backend returned non-finite token log-probabilities")

    @property
    def target_len(self) -> int:
        return len(self.token_logprobs)


def normalized_loglik(score: LikelihoodScore) -> float:
    """Length-normalized log-likelihood: mean of the per-token logprobs."""
    return math.fsum(score.token_logprobs) / score.target_len


def delta_effect(ell_with: float, ell_base: float) -> Vote:
    """Signed single-chunk effect: the vote carries sign(delta) and |delta|."""
    if not (math.isfinite(ell_with) and math.isfinite(ell_base)):
        raise ValueError("likelihoods must be finite")
    delta = ell_with - ell_base
    sign = (delta > 0) - (delta < 0)
    return Vote(sign, abs(delta))
