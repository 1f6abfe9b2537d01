"""Tests for the online retrieval-control loop."""

import pytest

from chunkshapley.generator import StubFixtures, StubGenerator
from chunkshapley.inference import InferenceConfig, decide, run
from chunkshapley.retrieval import Chunk
from chunkshapley.serialization import (
    DROP,
    KEEP,
    PromptKind,
    PromptParts,
    conforms_to_prompt_grammar,
)

PREFIX = "def solve(xs):\n    total = accumulate(xs)\n"
SUFFIX = "\n    return total\n"


def make_pool():
    texts = [
        "def accumulate(xs):\n    return sum(xs)",
        "def total_count(xs):\n    return len(xs)",
        "class Unrelated:\n    pass",
    ]
    return [Chunk.make(f"lib/m{i}.py", 1, 2, t) for i, t in enumerate(texts)]


def scripted_stub(need_logit, pool, decisions="kdk"):
    """Fixture set covering the control, selection, and both decode paths."""
    fx = StubFixtures()
    control = PromptParts(PromptKind.CONTROL, PREFIX, SUFFIX)
    fx.controls[control.render()] = (need_logit, 0.0)

    fx.decodes[PromptParts(PromptKind.NO_EVIDENCE, PREFIX, SUFFIX).render()] = "    total += 1\n"

    cfg = InferenceConfig(k=3, window=5)
    from chunkshapley.retrieval import Query, retrieve_topk

    q = Query.from_context(PREFIX, cfg.window)
    retrieved = retrieve_topk(q, pool, cfg.k)
    texts = tuple(c.text for c in retrieved)
    sel_prompt = PromptParts(PromptKind.SELECTION, PREFIX, SUFFIX, texts)
    stream = "".join(KEEP if ch == "k" else DROP for ch in decisions)
    fx.selections[sel_prompt.render()] = stream

    kept = tuple(t for t, ch in zip(texts, decisions) if ch == "k")
    fx.decodes[PromptParts(PromptKind.WITH_EVIDENCE, PREFIX, SUFFIX, kept).render()] = (
        "    total = sum(xs)\n"
    )
    fx.decodes[PromptParts(PromptKind.WITH_EVIDENCE, PREFIX, SUFFIX, ()).render()] = (
        "    total = 0\n"
    )
    return StubGenerator(fx), retrieved


class TestDecide:
    def test_boundary_inclusive(self):
        gen, _ = scripted_stub(0.0, make_pool())  # logits equal -> p_need = 0.5
        decision, p = decide(gen, PREFIX, SUFFIX, t_c=0.5)
        assert (decision, p) == ("NEED", 0.5)

    def test_zero_threshold_always_need(self):
        gen, _ = scripted_stub(-9.0, make_pool())
        assert decide(gen, PREFIX, SUFFIX, t_c=0.0)[0] == "NEED"

    def test_threshold_one_usually_done(self):
        gen, _ = scripted_stub(9.0, make_pool())
        decision, p = decide(gen, PREFIX, SUFFIX, t_c=1.0)
        assert p < 1.0 and decision == "DONE"


class TestRunPaths:
    def test_done_path_single_decode_no_retrieval(self):
        pool = make_pool()
        gen, _ = scripted_stub(-5.0, pool)
        completion, trace = run(gen, pool, PREFIX, SUFFIX, InferenceConfig(k=3, window=5))
        assert completion == "    total += 1\n"
        assert trace.trigger == "DONE"
        assert trace.retrieved is None
        assert gen.call_count("generate") == 1
        assert gen.call_count("select") == 0
        assert gen.call_count("control") == 1
        assert "retrieve" not in trace.durations

    def test_need_path_control_select_decode(self):
        pool = make_pool()
        gen, retrieved = scripted_stub(5.0, pool, decisions="kdk")
        completion, trace = run(gen, pool, PREFIX, SUFFIX, InferenceConfig(k=3, window=5))
        assert trace.trigger == "NEED"
        assert trace.selection == ["KEEP", "DROP", "KEEP"]
        assert trace.kept == [1, 3]
        assert completion == "    total = sum(xs)\n"
        assert gen.call_count("control") == 1
        assert gen.call_count("select") == 1
        assert gen.call_count("generate") == 1

    def test_final_prompt_contains_exactly_kept_chunks(self):
        pool = make_pool()
        gen, retrieved = scripted_stub(5.0, pool, decisions="kdk")
        run(gen, pool, PREFIX, SUFFIX, InferenceConfig(k=3, window=5))
        decode_prompt = [p for op, p in gen.call_log if op == "generate"][-1]
        kept_texts = [retrieved[0].text, retrieved[2].text]
        dropped = retrieved[1].text
        for t in kept_texts:
            assert t in decode_prompt
        assert dropped not in decode_prompt
        assert conforms_to_prompt_grammar(decode_prompt)

    def test_all_prompts_conform_to_grammar(self):
        pool = make_pool()
        gen, _ = scripted_stub(5.0, pool)
        run(gen, pool, PREFIX, SUFFIX, InferenceConfig(k=3, window=5))
        for _, prompt in gen.call_log:
            assert conforms_to_prompt_grammar(prompt)

    def test_empty_pool_need_path(self):
        gen, _ = scripted_stub(5.0, make_pool())
        completion, trace = run(gen, [], PREFIX, SUFFIX, InferenceConfig(k=3, window=5))
        assert trace.zero_candidates is True
        assert trace.selection == []
        assert completion == "    total = 0\n"  # empty-pack decode
        assert gen.call_count("select") == 0  # zero candidates -> no backend call

    def test_empty_selection_keeps_empty_pack_by_default(self):
        pool = make_pool()
        gen, _ = scripted_stub(5.0, pool, decisions="ddd")
        completion, trace = run(gen, pool, PREFIX, SUFFIX, InferenceConfig(k=3, window=5))
        assert trace.kept == []
        assert completion == "    total = 0\n"

    def test_empty_selection_fallback_flag(self):
        pool = make_pool()
        gen, _ = scripted_stub(5.0, pool, decisions="ddd")
        cfg = InferenceConfig(k=3, window=5, done_fallback_on_empty_selection=True)
        completion, _ = run(gen, pool, PREFIX, SUFFIX, cfg)
        assert completion == "    total += 1\n"  # closed-book template

    def test_trace_dict_omits_unexecuted_stages(self):
        pool = make_pool()
        gen, _ = scripted_stub(-5.0, pool)
        _, trace = run(gen, pool, PREFIX, SUFFIX, InferenceConfig(k=3, window=5))
        d = trace.to_dict()
        assert "retrieved" not in d and "selection" not in d


class TestTriggerMonotonicity:
    def test_need_count_non_increasing_in_threshold(self):
        pool = make_pool()
        need_count = []
        thresholds = [i / 20 for i in range(21)]
        for t_c in thresholds:
            gen, _ = scripted_stub(0.4, pool)
            decision, _ = decide(gen, PREFIX, SUFFIX, t_c)
            need_count.append(decision == "NEED")
        # once it flips to DONE it stays DONE
        flips = [a and not b for a, b in zip(need_count, need_count[1:])]
        assert all(not (b and not a) for a, b in zip(need_count, need_count[1:]))


class TestConfig:
    def test_bounds(self):
        with pytest.raises(ValueError):
            InferenceConfig(t_c=1.5)
        with pytest.raises(ValueError):
            InferenceConfig(k=0)

    def test_round_trip_rejects_unknown(self):
        cfg = InferenceConfig(t_c=0.25, k=5)
        assert InferenceConfig.from_dict(cfg.as_dict()) == cfg
        with pytest.raises(ValueError):
            InferenceConfig.from_dict({"bogus": 1})
