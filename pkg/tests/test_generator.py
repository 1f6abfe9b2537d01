"""Tests for the generator interface and the deterministic stub."""

import math

import pytest

from chunkshapley.errors import ShortSelectionError, StubFixtureMissing
from chunkshapley.generator import (
    ControlDistribution,
    StubFixtures,
    StubGenerator,
    parse_selection_stream,
)
from chunkshapley.metrics import normalized_loglik
from chunkshapley.serialization import DONE, DROP, KEEP, PromptKind, PromptParts


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


class TestControlDistribution:
    def test_equal_logits(self):
        d = ControlDistribution.from_logits(0.0, 0.0)
        assert d.p_need == d.p_done == 0.5

    def test_two_way_softmax_is_logistic_of_difference(self):
        d = ControlDistribution.from_logits(1.0, 0.0)
        assert d.p_need == pytest.approx(sigmoid(1.0), abs=1e-12)

    def test_negative_difference(self):
        d = ControlDistribution.from_logits(-3.0, 3.0)
        assert d.p_need == pytest.approx(sigmoid(-6.0), rel=1e-9)

    def test_extreme_logits_no_overflow(self):
        for need, done in [(1e4, -1e4), (-1e4, 1e4), (1e4, 1e4)]:
            d = ControlDistribution.from_logits(need, done)
            assert math.isfinite(d.p_need) and math.isfinite(d.p_done)
            assert abs(d.p_need + d.p_done - 1.0) <= 1e-9


class TestSelectionParsing:
    def test_clean_stream(self):
        r = parse_selection_stream(f"{KEEP}{DROP}{KEEP}", 3)
        assert r.decisions == ("KEEP", "DROP", "KEEP")
        assert r.coerced_positions == ()

    def test_stray_token_coerced(self):
        r = parse_selection_stream(f"{KEEP}garbage{KEEP}", 3)
        assert r.decisions == ("KEEP", "DROP", "KEEP")
        assert r.coerced_positions == (2,)

    def test_done_ends_stream_short(self):
        with pytest.raises(ShortSelectionError) as exc:
            parse_selection_stream(f"{KEEP}{DONE}{KEEP}", 3)
        assert exc.value.partial.decisions == ("KEEP",)

    def test_extra_tokens_ignored(self):
        r = parse_selection_stream(f"{KEEP}{KEEP}{DROP}", 2)
        assert r.decisions == ("KEEP", "KEEP")


def make_stub():
    fx = StubFixtures()
    base = PromptParts(PromptKind.NO_EVIDENCE, "p", "s")
    with_chunk = PromptParts(PromptKind.WITH_EVIDENCE, "p", "s", ("helpful",))
    fx.add_score(base.render(), "foo", -2.0)
    fx.add_score(with_chunk.render(), "foo", -1.6)
    fx.decodes[base.render()] = "return x"
    fx.controls[PromptParts(PromptKind.CONTROL, "p", "s").render()] = (1.0, 0.0)
    sel = PromptParts(PromptKind.SELECTION, "p", "s", ("a", "b", "c"))
    fx.selections[sel.render()] = f"{KEEP}{DROP}{KEEP}"
    return StubGenerator(fx), base, with_chunk, sel


class TestStubGenerator:
    def test_score_lookup_and_shape(self):
        gen, base, _, _ = make_stub()
        score = gen.score(base, "foo")
        assert score.target_len == len("foo")
        assert normalized_loglik(score) == -2.0

    def test_scripted_likelihood_gain(self):
        gen, base, with_chunk, _ = make_stub()
        ell_base = normalized_loglik(gen.score(base, "foo"))
        ell_with = normalized_loglik(gen.score(with_chunk, "foo"))
        assert ell_with - ell_base == pytest.approx(0.4)

    def test_missing_fixture_is_loud(self):
        gen, base, _, _ = make_stub()
        with pytest.raises(StubFixtureMissing):
            gen.score(base, "unknown target")

    def test_generate_scripted(self):
        gen, base, _, _ = make_stub()
        assert gen.generate(base, 64) == "return x"

    def test_stop_truncation(self):
        fx = StubFixtures()
        p = PromptParts(PromptKind.NO_EVIDENCE, "q", "s")
        fx.decodes[p.render()] = "a\n\nb"
        gen = StubGenerator(fx)
        assert gen.generate(p, 64, ("\n\n",)) == "a"

    def test_zero_new_tokens(self):
        gen, base, _, _ = make_stub()
        assert gen.generate(base, 0) == ""

    def test_control_scripted(self):
        gen, *_ = make_stub()
        d = gen.control_distribution(PromptParts(PromptKind.CONTROL, "p", "s"))
        assert d.p_need == pytest.approx(sigmoid(1.0))

    def test_select_scripted(self):
        gen, _, _, sel = make_stub()
        r = gen.select_tokens(sel, 3)
        assert r.decisions == ("KEEP", "DROP", "KEEP")

    def test_select_zero_candidates_no_call(self):
        gen, *_ = make_stub()
        r = gen.select_tokens(PromptParts(PromptKind.SELECTION, "p", "s", ()), 0)
        assert r.decisions == ()
        assert gen.call_log == []

    def test_call_log(self):
        gen, base, with_chunk, _ = make_stub()
        gen.score(base, "foo")
        gen.score(with_chunk, "foo")
        gen.generate(base, 8)
        assert gen.call_count("score") == 2
        assert gen.call_count("generate") == 1

    def test_determinism(self):
        gen, base, _, _ = make_stub()
        assert gen.score(base, "foo") == gen.score(base, "foo")
        assert gen.generate(base, 64) == gen.generate(base, 64)

    def test_fixture_json_round_trip(self):
        gen, base, _, _ = make_stub()
        fx2 = StubFixtures.from_json(gen.fixtures.to_json())
        assert fx2.scores == gen.fixtures.scores
        assert fx2.decodes == gen.fixtures.decodes
        assert fx2.controls == gen.fixtures.controls
        assert fx2.selections == gen.fixtures.selections


class TestTruncationThroughStub:
    def test_target_never_truncated(self):
        fx = StubFixtures()
        long_prefix = "\n".join(f"line {i}" for i in range(100))
        parts = PromptParts(PromptKind.NO_EVIDENCE, long_prefix, "suf")
        budget = 120
        from chunkshapley.serialization import fit_to_budget

        truncated = fit_to_budget(parts, budget)
        fx.add_score(truncated.render(), "target", -1.0)
        gen = StubGenerator(fx, max_context_chars=budget)
        score = gen.score(parts, "target")  # hits the truncated prompt's entry
        assert score.target_len == len("target")
        assert truncated.suffix == "suf"
        assert truncated.prefix.startswith("line")  # left lines removed, tail kept
        assert len(truncated.render()) <= budget
