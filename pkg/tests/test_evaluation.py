import math

import pytest

from constrained_ec.corpus import CorpusPair
from constrained_ec.evaluation import (
    bench_latency, correction_ratio_by_type, edit_counts, format_table, wer,
)
from constrained_ec.inference import CorrectionResult

from oracles import levenshtein_reference


def test_wer_examples():
    assert wer(["a b c"], ["a x c"]).wer == pytest.approx(1 / 3)
    report = wer([""], ["a b"])
    assert report.deletions == 2 and report.wer == 1.0
    assert wer(["a b", "c"], ["a b", "c"]).wer == 0.0


def test_wer_normalises_case_and_spaces():
    assert wer(["A  b\tC"], ["a b c"]).wer == 0.0


def test_wer_is_corpus_level():
    report = wer(["a", "x y z w"], ["b", "x y z w"])
    assert report.wer == pytest.approx(1 / 5)
    assert len(report.per_utterance) == 2


def test_wer_errors():
    with pytest.raises(ValueError):
        wer(["a"], ["a", "b"])
    with pytest.raises(ValueError):
        wer(["a"], [""])


def test_insertions_counted():
    counts = edit_counts("a b c d".split(), "a b".split())
    assert (counts.substitutions, counts.deletions, counts.insertions) == (0, 0, 2)


def test_edit_counts_match_reference_distance():
    import random

    rng = random.Random(0)
    for _ in range(500):
        h = [rng.choice("abc") for _ in range(rng.randrange(7))]
        r = [rng.choice("abc") for _ in range(rng.randrange(7))]
        assert edit_counts(h, r).errors == levenshtein_reference(h, r)


def fake_system(ms_steps):
    def run(text):
        return CorrectionResult(text, decoder_steps=ms_steps, tokens_in=len(text.split()))
    return run


def test_bench_self_speedup_and_steps():
    report = bench_latency([("a", fake_system(3)), ("b", fake_system(12))], ["x y"] * 20, warmup=2, reps=2)
    assert report.systems["a"].total_steps == 60
    assert report.step_ratio("a", "b") == 4.0
    assert report.systems["a"].steps_stable
    assert len(report.systems["a"].wall_ms) == 40
    assert all(t > 0 for t in report.systems["a"].wall_ms)
    assert report.speedup("a", "a") == 1.0
    assert set(report.to_dict()["speedups"]) == {"a_vs_b", "b_vs_a"}


def test_bench_rejects_empty():
    with pytest.raises(ValueError):
        bench_latency([], ["x"])
    with pytest.raises(ValueError):
        bench_latency([("a", fake_system(1))], [])


def test_correction_ratio():
    pairs = [
        CorpusPair("a b", "a c", frozenset({"grammatical"})),
        CorpusPair("a", "a b", frozenset({"delete"})),
        CorpusPair("x y", "x z", frozenset({"grammatical", "delete"})),
        CorpusPair("q", "r"),
    ]
    report = correction_ratio_by_type(list(zip(pairs, ["a c", "a", "x z", "r"])))
    assert report.ratio("grammatical") == 1.0
    assert report.ratio("delete") == 0.5
    assert report.excluded == 1
    assert report.sentence_accuracy == pytest.approx(2 / 3)
    assert math.isnan(report.ratio("entity"))


def test_perfect_outputs_score_one():
    pairs = [CorpusPair("a", "b", frozenset({t})) for t in ("grammatical", "entity", "delete")]
    report = correction_ratio_by_type([(p, p.ref_text) for p in pairs])
    assert all(v == 1.0 for v in report.to_dict()["ratios"].values())


def test_identity_model_fixes_no_deletions():
    pairs = [CorpusPair("a c", "a b c", frozenset({"delete"}))] * 4
    assert correction_ratio_by_type([(p, p.asr_text) for p in pairs]).ratio("delete") == 0.0


def test_format_table():
    text = format_table([("x", 1.5)], ["name", "value"])
    assert text.splitlines()[0].split() == ["name", "value"]
    assert "1.5000" in text
