"""Control tokens, prompt templates, and the training-stream grammar.

Serialized sequences interleave literal ASCII control markers with raw
content, with no separators, so every byte of a stream is either a marker
or content. Four prompt shapes exist:

- CONTROL      <PFX>prefix<SFX>suffix                      (next token is the
                                                            retrieval decision)
- SELECTION    ...<NEED><C_1>c1</C_1>...<C_K>cK</C_K><SELECT>
- WITH_EVIDENCE ...<NEED>Pack(kept)<DONE><MID>             (decode/score with
                                                            evidence; empty pack allowed)
- NO_EVIDENCE  ...<DONE><MID>                              (closed-book decode/score)

Content must not embed any marker string; rendering rejects collisions so
the grammar stays unambiguous and streams can be re-parsed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

from .errors import MarkerCollisionError, SizingError

PFX = "<PFX>"
SFX = "<SFX>"
MID = "<MID>"
NEED = "<NEED>"
DONE = "<DONE>"
SELECT = "<SELECT>"
KEEP = "<KEEP>"
DROP = "<DROP>"

_MARKER_RE = re.compile(r"</?(?:PFX|SFX|MID|NEED|DONE|SELECT|KEEP|DROP|C_\d+)>")


def chunk_open(i: int) -> str:
    return f"<C_{i}>"


def chunk_close(i: int) -> str:
    return f"</C_{i}>"


def check_no_markers(text: str, what: str = "content") -> None:
    m = _MARKER_RE.search(text)
    if m:
        raise MarkerCollisionError(f"{what} embeds control marker {m.group(0)!r}")


def pack(chunks: Sequence[str]) -> str:
    """Deterministic candidate serialization: <C_1>c1</C_1>...<C_n>cn</C_n>."""
    return "".join(
        f"{chunk_open(i)}{text}{chunk_close(i)}" for i, text in enumerate(chunks, start=1)
    )


class PromptKind(Enum):
    CONTROL = "control"
    SELECTION = "selection"
    WITH_EVIDENCE = "with-evidence"
    NO_EVIDENCE = "no-evidence"


@dataclass(frozen=True)
class PromptParts:
    """Prompt content plus the template it serializes under.

    Rendering the same parts is byte-identical across calls; the markers
    property lists the interleaved control tokens, which is also the wire
    representation of the template.
    """

    kind: PromptKind
    prefix: str
    suffix: str
    evidence: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "evidence", tuple(self.evidence))
        if self.kind in (PromptKind.CONTROL, PromptKind.NO_EVIDENCE) and self.evidence:
            raise ValueError(f"{self.kind.value} prompts carry no evidence")
        check_no_markers(self.prefix, "prefix")
        check_no_markers(self.suffix, "suffix")
        for text in self.evidence:
            check_no_markers(text, "evidence chunk")

    @property
    def markers(self) -> tuple[str, ...]:
        return _markers_for(self.kind, len(self.evidence))

    def render(self) -> str:
        base = f"{PFX}{self.prefix}{SFX}{self.suffix}"
        if self.kind is PromptKind.CONTROL:
            return base
        if self.kind is PromptKind.NO_EVIDENCE:
            return f"{base}{DONE}{MID}"
        packed = pack(self.evidence)
        if self.kind is PromptKind.SELECTION:
            return f"{base}{NEED}{packed}{SELECT}"
        return f"{base}{NEED}{packed}{DONE}{MID}"


def _markers_for(kind: PromptKind, n_evidence: int) -> tuple[str, ...]:
    pack_markers: tuple[str, ...] = ()
    for i in range(1, n_evidence + 1):
        pack_markers += (chunk_open(i), chunk_close(i))
    if kind is PromptKind.CONTROL:
        return (PFX, SFX)
    if kind is PromptKind.NO_EVIDENCE:
        return (PFX, SFX, DONE, MID)
    if kind is PromptKind.SELECTION:
        return (PFX, SFX, NEED) + pack_markers + (SELECT,)
    return (PFX, SFX, NEED) + pack_markers + (DONE, MID)


def kind_from_markers(markers: Sequence[str], n_evidence: int) -> PromptKind:
    """Recover the template from its marker list (used by the wire protocol)."""
    markers = tuple(markers)
    for kind in PromptKind:
        if kind in (PromptKind.CONTROL, PromptKind.NO_EVIDENCE) and n_evidence:
            continue
        if _markers_for(kind, n_evidence) == markers:
            return kind
    raise ValueError(f"marker list {markers!r} matches no known prompt template")


def fit_to_budget(parts: PromptParts, max_chars: int | None) -> PromptParts:
    """Left-truncate input-side content until the rendered prompt fits.

    Whole lines are removed from the far left of the prefix first; if the
    prefix is exhausted, evidence chunks are dropped from the low-priority
    end (largest retrieval rank first). Suffix and any score target are
    never touched. Raises SizingError if nothing more can be removed.
    """
    if max_chars is None:
        return parts
    current = parts
    while len(current.render()) > max_chars:
        if current.prefix:
            lines = current.prefix.split("\n")
            over = len(current.render()) - max_chars
            dropped = 0
            while lines and dropped < over:
                dropped += len(lines.pop(0)) + 1  # +1 for the newline separator
            current = replace(current, prefix="\n".join(lines))
        elif current.evidence:
            current = replace(current, evidence=current.evidence[:-1])
        else:
            raise SizingError(
                f"prompt is {len(current.render())} chars after exhausting "
                f"prefix and evidence; budget is {max_chars}"
            )
    return current


# --- training streams ------------------------------------------------------

F1 = "F1"
F2 = "F2"
NO_RETRIEVAL = "NO_RETRIEVAL"
TRAINING_FORMATS = (F1, F2, NO_RETRIEVAL)


@dataclass(frozen=True)
class TrainingInstance:
    """One serialized training sequence with half-open loss-mask char spans.

    Supervised regions are exactly: the retrieval-control token, the
    selection tokens (F1), and the target span (F2 / no-retrieval).
    """

    format: str
    token_stream: str
    loss_mask_spans: tuple[tuple[int, int], ...]


class _StreamBuilder:
    def __init__(self):
        self.parts: list[str] = []
        self.pos = 0
        self.spans: list[tuple[int, int]] = []

    def add(self, text: str, supervised: bool = False) -> None:
        if supervised:
            self.spans.append((self.pos, self.pos + len(text)))
        self.parts.append(text)
        self.pos += len(text)

    def build(self, fmt: str) -> TrainingInstance:
        return TrainingInstance(fmt, "".join(self.parts), tuple(self.spans))


def build_f1_stream(
    prefix: str, suffix: str, chunks: Sequence[str], decisions: Sequence[str]
) -> TrainingInstance:
    """Selection format: all K candidates packed, one KEEP/DROP token per chunk."""
    if len(chunks) != len(decisions):
        raise ValueError("one decision per packed chunk")
    if not chunks:
        raise ValueError("selection format needs at least one candidate")
    _check_contents(prefix, suffix, chunks)
    b = _StreamBuilder()
    b.add(f"{PFX}{prefix}{SFX}{suffix}")
    b.add(NEED, supervised=True)
    b.add(pack(chunks))
    b.add(SELECT)
    for d in decisions:
        if d not in ("KEEP", "DROP"):
            raise ValueError(f"decision must be KEEP or DROP, got {d!r}")
        b.add(KEEP if d == "KEEP" else DROP, supervised=True)
    b.add(DONE)
    return b.build(F1)


def build_f2_stream(
    prefix: str, suffix: str, kept_chunks: Sequence[str], target: str
) -> TrainingInstance:
    """Generation format: only the verified coalition packed, then the target span."""
    if not kept_chunks:
        raise ValueError("generation format requires a non-empty coalition")
    if not target:
        raise ValueError("target span must be non-empty")
    _check_contents(prefix, suffix, kept_chunks, target)
    b = _StreamBuilder()
    b.add(f"{PFX}{prefix}{SFX}{suffix}")
    b.add(NEED, supervised=True)
    b.add(pack(kept_chunks))
    b.add(f"{DONE}{MID}")
    b.add(target, supervised=True)
    return b.build(F2)


def build_no_retrieval_stream(prefix: str, suffix: str, target: str) -> TrainingInstance:
    """No-retrieval format: in-file context suffices, no cross-file block."""
    if not target:
        raise ValueError("target span must be non-empty")
    _check_contents(prefix, suffix, (), target)
    b = _StreamBuilder()
    b.add(f"{PFX}{prefix}{SFX}{suffix}")
    b.add(DONE, supervised=True)
    b.add(MID)
    b.add(target, supervised=True)
    return b.build(NO_RETRIEVAL)


def _check_contents(prefix, suffix, chunks, target=None):
    check_no_markers(prefix, "prefix")
    check_no_markers(suffix, "suffix")
    for c in chunks:
        check_no_markers(c, "chunk")
    if target is not None:
        check_no_markers(target, "target")


# --- recognizer -------------------------------------------------------------


@dataclass(frozen=True)
class ParsedStream:
    """Structural parse of a training stream, with spans of the supervised regions."""

    format: str
    prefix: str
    suffix: str
    chunks: tuple[str, ...]
    decisions: tuple[str, ...]
    target: str | None
    supervised_spans: tuple[tuple[int, int], ...]


class StreamParseError(ValueError):
    pass


class _Scanner:
    def __init__(self, stream: str):
        self.s = stream
        self.pos = 0

    def expect(self, marker: str) -> tuple[int, int]:
        if not self.s.startswith(marker, self.pos):
            raise StreamParseError(f"expected {marker!r} at offset {self.pos}")
        span = (self.pos, self.pos + len(marker))
        self.pos = span[1]
        return span

    def until(self, markers: Sequence[str]) -> tuple[str, str]:
        """Consume content up to the leftmost occurrence of any marker."""
        best = None
        hit = None
        for m in markers:
            idx = self.s.find(m, self.pos)
            if idx != -1 and (best is None or idx < best):
                best, hit = idx, m
        if best is None:
            raise StreamParseError(
                f"none of {markers!r} found after offset {self.pos}"
            )
        content = self.s[self.pos : best]
        self.pos = best
        return content, hit

    def rest(self) -> str:
        out = self.s[self.pos :]
        self.pos = len(self.s)
        return out

    def peek(self, marker: str) -> bool:
        return self.s.startswith(marker, self.pos)


def parse_training_stream(stream: str) -> ParsedStream:
    """Parse a serialized training stream back into its regions.

    Markers are located by leftmost search, which is exact because content
    is rejected at serialization time if it embeds marker strings.
    """
    sc = _Scanner(stream)
    sc.expect(PFX)
    prefix, _ = sc.until([SFX])
    sc.expect(SFX)
    suffix, hit = sc.until([NEED, DONE])

    if hit == DONE:
        span_r = sc.expect(DONE)
        sc.expect(MID)
        target = sc.rest()
        if not target:
            raise StreamParseError("no-retrieval stream has an empty target")
        span_y = (len(stream) - len(target), len(stream))
        return ParsedStream(
            NO_RETRIEVAL, prefix, suffix, (), (), target, (span_r, span_y)
        )

    span_r = sc.expect(NEED)
    chunks: list[str] = []
    while sc.peek(chunk_open(len(chunks) + 1)):
        i = len(chunks) + 1
        sc.expect(chunk_open(i))
        text, _ = sc.until([chunk_close(i)])
        sc.expect(chunk_close(i))
        chunks.append(text)

    if sc.peek(SELECT):
        if not chunks:
            raise StreamParseError("selection stream packs no candidates")
        sc.expect(SELECT)
        decisions: list[str] = []
        spans = [span_r]
        while not sc.peek(DONE):
            if sc.peek(KEEP):
                spans.append(sc.expect(KEEP))
                decisions.append("KEEP")
            elif sc.peek(DROP):
                spans.append(sc.expect(DROP))
                decisions.append("DROP")
            else:
                raise StreamParseError(
                    f"expected a selection token at offset {sc.pos}"
                )
        sc.expect(DONE)
        if sc.pos != len(stream):
            raise StreamParseError("trailing bytes after the selection block")
        if len(decisions) != len(chunks):
            raise StreamParseError(
                f"{len(chunks)} chunks but {len(decisions)} selection tokens"
            )
        return ParsedStream(
            F1, prefix, suffix, tuple(chunks), tuple(decisions), None, tuple(spans)
        )

    if sc.peek(DONE):
        if not chunks:
            raise StreamParseError("generation stream packs no candidates")
        sc.expect(DONE)
        sc.expect(MID)
        target = sc.rest()
        if not target:
            raise StreamParseError("generation stream has an empty target")
        span_y = (len(stream) - len(target), len(stream))
        return ParsedStream(
            F2, prefix, suffix, tuple(chunks), (), target, (span_r, span_y)
        )

    raise StreamParseError(f"unparseable block at offset {sc.pos}")


def conforms_to_prompt_grammar(prompt: str) -> bool:
    """True iff a rendered prompt matches one of the four template shapes."""
    try:
        _parse_prompt(prompt)
        return True
    except StreamParseError:
        return False


def _parse_prompt(prompt: str) -> PromptKind:
    sc = _Scanner(prompt)
    sc.expect(PFX)
    sc.until([SFX])
    sc.expect(SFX)
    # control prompts end right after the suffix; others carry a marker tail
    try:
        _, hit = sc.until([NEED, DONE])
    except StreamParseError:
        sc.rest()
        return PromptKind.CONTROL
    if hit == DONE:
        sc.expect(DONE)
        sc.expect(MID)
        if sc.pos != len(prompt):
            raise StreamParseError("trailing bytes after <MID>")
        return PromptKind.NO_EVIDENCE
    sc.expect(NEED)
    n = 0
    while sc.peek(chunk_open(n + 1)):
        n += 1
        sc.expect(chunk_open(n))
        sc.until([chunk_close(n)])
        sc.expect(chunk_close(n))
    if sc.peek(SELECT):
        sc.expect(SELECT)
        if sc.pos != len(prompt) or n == 0:
            raise StreamParseError("malformed selection prompt")
        return PromptKind.SELECTION
    sc.expect(DONE)
    sc.expect(MID)
    if sc.pos != len(prompt):
        raise StreamParseError("trailing bytes after <MID>")
    return PromptKind.WITH_EVIDENCE
