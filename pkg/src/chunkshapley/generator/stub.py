"""Deterministic stub backend for tests, CI, and offline fixture runs.

Responses are scripted per rendered prompt. The stub "tokenizes" by
character: scored targets get one logprob per character and max_new_tokens
caps decode length in characters. It records every backend call so tests
can assert call budgets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import StubFixtureMissing
from ..metrics import LikelihoodScore
from ..serialization import PromptParts, fit_to_budget
from .base import ControlDistribution, Generator, SelectionResult, parse_selection_stream, truncate_at_stop


@dataclass
class StubFixtures:
    """Scripted responses keyed by the rendered prompt string."""

    scores: dict[tuple[str, str], tuple[float, ...]] = field(default_factory=dict)
    decodes: dict[str, str] = field(default_factory=dict)
    controls: dict[str, tuple[float, float]] = field(default_factory=dict)
    selections: dict[str, str] = field(default_factory=dict)
    decode_default: str | None = None
    control_default: tuple[float, float] = (0.0, 0.0)

    def add_score(self, prompt: str, target: str, ell: float) -> None:
        """Script a uniform per-character logprob vector whose mean is ell."""
        self.scores[(prompt, target)] = (float(ell),) * max(1, len(target))

    def to_json(self) -> str:
        payload = {
            "scores": [
                {"prompt": p, "target": t, "token_logprobs": list(v)}
                for (p, t), v in self.scores.items()
            ],
            "decodes": [{"prompt": p, "text": t} for p, t in self.decodes.items()],
            "controls": [
                {"prompt": p, "need": n, "done": d} for p, (n, d) in self.controls.items()
            ],
            "selections": [{"prompt": p, "text": t} for p, t in self.selections.items()],
            "decode_default": self.decode_default,
            "control_default": list(self.control_default),
        }
        return json.dumps(payload, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "StubFixtures":
        payload = json.loads(text)
        fx = cls()
        for row in payload.get("scores", []):
            fx.scores[(row["prompt"], row["target"])] = tuple(row["token_logprobs"])
        for row in payload.get("decodes", []):
            fx.decodes[row["prompt"]] = row["text"]
        for row in payload.get("controls", []):
            fx.controls[row["prompt"]] = (row["need"], row["done"])
        for row in payload.get("selections", []):
            fx.selections[row["prompt"]] = row["text"]
        fx.decode_default = payload.get("decode_default")
        fx.control_default = tuple(payload.get("control_default", (0.0, 0.0)))
        return fx

    @classmethod
    def load(cls, path: str | Path) -> "StubFixtures":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


class StubGenerator(Generator):
    """Pure lookup backend; lock-free after construction."""

    def __init__(self, fixtures: StubFixtures, max_context_chars: int | None = None):
        self.fixtures = fixtures
        self.max_context_chars = max_context_chars
        self.call_log: list[tuple[str, str]] = []

    def call_count(self, op: str) -> int:
        return sum(1 for name, _ in self.call_log if name == op)

    def _prompt(self, parts: PromptParts) -> str:
        return fit_to_budget(parts, self.max_context_chars).render()

    def score(self, parts: PromptParts, target: str) -> LikelihoodScore:
        if not target:
            raise ValueError("score target must be non-empty")
        prompt = self._prompt(parts)
        self.call_log.append(("score", prompt))
        try:
            logprobs = self.fixtures.scores[(prompt, target)]
        except KeyError:
            raise StubFixtureMissing(
                f"no scripted score for target {target!r} under prompt "
                f"{prompt[:80]!r}..."
            ) from None
        return LikelihoodScore(logprobs)

    def generate(self, parts: PromptParts, max_new_tokens: int, stop: tuple[str, ...] = ()) -> str:
        prompt = self._prompt(parts)
        self.call_log.append(("generate", prompt))
        if max_new_tokens == 0:
            return ""
        text = self.fixtures.decodes.get(prompt)
        if text is None:
            text = self.fixtures.decode_default
        if text is None:
            raise StubFixtureMissing(f"no scripted decode for prompt {prompt[:80]!r}...")
        return truncate_at_stop(text[:max_new_tokens], tuple(stop))

    def control_distribution(self, parts: PromptParts) -> ControlDistribution:
        prompt = self._prompt(parts)
        self.call_log.append(("control", prompt))
        need, done = self.fixtures.controls.get(prompt, self.fixtures.control_default)
        return ControlDistribution.from_logits(need, done)

    def _select(self, parts: PromptParts, k: int) -> SelectionResult:
        prompt = self._prompt(parts)
        self.call_log.append(("select", prompt))
        try:
            raw = self.fixtures.selections[prompt]
        except KeyError:
            raise StubFixtureMissing(
                f"no scripted selection for prompt {prompt[:80]!r}..."
            ) from None
        return parse_selection_stream(raw, k)
