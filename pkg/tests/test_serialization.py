"""Tests for prompt templates, packing, truncation, and the stream grammar."""

import random
import string

import pytest

from chunkshapley.errors import MarkerCollisionError, SizingError
from chunkshapley.serialization import (
    DONE,
    DROP,
    F1,
    F2,
    KEEP,
    MID,
    NEED,
    NO_RETRIEVAL,
    PFX,
    SELECT,
    SFX,
    PromptKind,
    PromptParts,
    build_f1_stream,
    build_f2_stream,
    build_no_retrieval_stream,
    conforms_to_prompt_grammar,
    fit_to_budget,
    kind_from_markers,
    pack,
    parse_training_stream,
)


class TestPack:
    def test_single(self):
        assert pack(["a"]) == "<C_1>a</C_1>"

    def test_empty(self):
        assert pack([]) == ""

    def test_order_and_indexing(self):
        assert pack(["a", "b"]) == "<C_1>a</C_1><C_2>b</C_2>"


class TestPromptParts:
    def test_render_deterministic(self):
        p = PromptParts(PromptKind.SELECTION, "pre\n", "suf\n", ("c1", "c2"))
        assert p.render() == p.render()

    def test_templates(self):
        base = f"{PFX}p{SFX}s"
        assert PromptParts(PromptKind.CONTROL, "p", "s").render() == base
        assert PromptParts(PromptKind.NO_EVIDENCE, "p", "s").render() == f"{base}{DONE}{MID}"
        assert (
            PromptParts(PromptKind.SELECTION, "p", "s", ("c",)).render()
            == f"{base}{NEED}<C_1>c</C_1>{SELECT}"
        )
        assert (
            PromptParts(PromptKind.WITH_EVIDENCE, "p", "s", ("c",)).render()
            == f"{base}{NEED}<C_1>c</C_1>{DONE}{MID}"
        )

    def test_marker_collision_rejected(self):
        with pytest.raises(MarkerCollisionError):
            PromptParts(PromptKind.CONTROL, "x <MID> y", "s")
        with pytest.raises(MarkerCollisionError):
            PromptParts(PromptKind.WITH_EVIDENCE, "p", "s", ("a <C_3> b",))

    def test_markers_round_trip(self):
        for kind in PromptKind:
            n = 0 if kind in (PromptKind.CONTROL, PromptKind.NO_EVIDENCE) else 3
            p = PromptParts(kind, "p", "s", tuple("abc")[:n])
            assert kind_from_markers(p.markers, n) is kind

    def test_unknown_markers_rejected(self):
        with pytest.raises(ValueError):
            kind_from_markers((PFX, SFX, SELECT), 0)

    def test_prompt_grammar_conformance(self):
        for kind in PromptKind:
            n = 0 if kind in (PromptKind.CONTROL, PromptKind.NO_EVIDENCE) else 2
            p = PromptParts(kind, "def f():\n    pass", "return 1", ("c1", "c2")[:n])
            assert conforms_to_prompt_grammar(p.render())
        # empty-pack decode prompt (selection kept nothing) is still valid
        p = PromptParts(PromptKind.WITH_EVIDENCE, "p", "s", ())
        assert conforms_to_prompt_grammar(p.render())
        assert not conforms_to_prompt_grammar("no markers at all")


class TestTruncation:
    def test_no_budget_is_identity(self):
        p = PromptParts(PromptKind.CONTROL, "p", "s")
        assert fit_to_budget(p, None) is p

    def test_prefix_truncated_line_wise_from_left(self):
        prefix = "line1\nline2\nline3"
        p = PromptParts(PromptKind.CONTROL, prefix, "s")
        budget = len(p.render()) - 3  # force dropping at least one line
        q = fit_to_budget(p, budget)
        assert q.prefix == "line2\nline3"
        assert len(q.render()) <= budget
        assert q.suffix == "s"

    def test_evidence_dropped_worst_rank_first_after_prefix(self):
        p = PromptParts(PromptKind.WITH_EVIDENCE, "pp", "s", ("best", "worst"))
        overhead = len(PromptParts(PromptKind.WITH_EVIDENCE, "", "s", ("best",)).render())
        q = fit_to_budget(p, overhead)
        assert q.prefix == ""
        assert q.evidence == ("best",)

    def test_sizing_error_when_nothing_left(self):
        p = PromptParts(PromptKind.CONTROL, "", "a long suffix that stays")
        with pytest.raises(SizingError):
            fit_to_budget(p, 5)


def _chunk_bounds(stream, i, text):
    open_m, close_m = f"<C_{i}>", f"</C_{i}>"
    start = stream.index(open_m) + len(open_m)
    assert stream[start : start + len(text)] == text


class TestTrainingStreams:
    def test_f1_layout_and_spans(self):
        t = build_f1_stream("p", "s", ["c1", "c2"], ["KEEP", "DROP"])
        assert t.format == F1
        assert t.token_stream == (
            f"{PFX}p{SFX}s{NEED}<C_1>c1</C_1><C_2>c2</C_2>{SELECT}{KEEP}{DROP}{DONE}"
        )
        assert f"{SELECT}{KEEP}{DROP}{DONE}" in t.token_stream
        covered = [t.token_stream[a:b] for a, b in t.loss_mask_spans]
        assert covered == [NEED, KEEP, DROP]

    def test_f2_layout_and_spans(self):
        t = build_f2_stream("p", "s", ["kept"], "target\n")
        assert t.token_stream == (
            f"{PFX}p{SFX}s{NEED}<C_1>kept</C_1>{DONE}{MID}target\n"
        )
        covered = [t.token_stream[a:b] for a, b in t.loss_mask_spans]
        assert covered == [NEED, "target\n"]

    def test_no_retrieval_layout_and_spans(self):
        t = build_no_retrieval_stream("p", "s", "y")
        assert t.token_stream == f"{PFX}p{SFX}s{DONE}{MID}y"
        covered = [t.token_stream[a:b] for a, b in t.loss_mask_spans]
        assert covered == [DONE, "y"]

    def test_f2_rejects_empty_coalition(self):
        with pytest.raises(ValueError):
            build_f2_stream("p", "s", [], "y")

    def test_round_trip_through_parser(self):
        rng = random.Random(31)
        alphabet = string.ascii_letters + string.digits + " \n():=.#"
        rand = lambda lo, hi: "".join(
            rng.choice(alphabet) for _ in range(rng.randint(lo, hi))
        )
        for _ in range(100):
            prefix, suffix, target = rand(0, 40), rand(0, 40), rand(1, 20)
            k = rng.randint(1, 6)
            chunks = [rand(1, 30) for _ in range(k)]
            decisions = [rng.choice(["KEEP", "DROP"]) for _ in range(k)]

            f1 = build_f1_stream(prefix, suffix, chunks, decisions)
            p1 = parse_training_stream(f1.token_stream)
            assert (p1.format, p1.prefix, p1.suffix) == (F1, prefix, suffix)
            assert p1.chunks == tuple(chunks)
            assert p1.decisions == tuple(decisions)
            assert p1.supervised_spans == f1.loss_mask_spans

            kept = [c for c, d in zip(chunks, decisions) if d == "KEEP"] or [chunks[0]]
            f2 = build_f2_stream(prefix, suffix, kept, target)
            p2 = parse_training_stream(f2.token_stream)
            assert (p2.format, p2.target) == (F2, target)
            assert p2.chunks == tuple(kept)
            assert p2.supervised_spans == f2.loss_mask_spans

            nr = build_no_retrieval_stream(prefix, suffix, target)
            p3 = parse_training_stream(nr.token_stream)
            assert (p3.format, p3.target) == (NO_RETRIEVAL, target)
            assert p3.supervised_spans == nr.loss_mask_spans
