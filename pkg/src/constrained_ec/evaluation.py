"""Word error rate, latency benchmarking and per-error-type correction ratios."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple

from .corpus import ERROR_TYPES, CorpusPair
from .tokenizer import normalize


@dataclass
class EditCounts:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    ref_words: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def edit_counts(hyp: Sequence[str], ref: Sequence[str]) -> EditCounts:
    """Unit-cost Levenshtein alignment of word lists, split into S/D/I."""
    n, m = len(ref), len(hyp)
    # dist[i][j]: cost of turning hyp[:j] into ref[:i]
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dist[i][0] = i
    for j in range(1, m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        r = ref[i - 1]
        row, above = dist[i], dist[i - 1]
        for j in range(1, m + 1):
            sub = above[j - 1] + (r != hyp[j - 1])
            row[j] = min(sub, above[j] + 1, row[j - 1] + 1)

    counts = EditCounts(ref_words=n)
    i, j = n, m
    while i or j:
        if i and j and dist[i][j] == dist[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            counts.substitutions += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i and dist[i][j] == dist[i - 1][j] + 1:
            counts.deletions += 1
            i -= 1
        else:
            counts.insertions += 1
            j -= 1
    return counts


@dataclass
class WerReport:
    substitutions: int
    deletions: int
    insertions: int
    ref_words: int
    per_utterance: List[EditCounts] = field(default_factory=list)

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.errors / self.ref_words

    def to_dict(self) -> dict:
        return {
            "wer": self.wer,
            "substitutions": self.substitutions,
            "deletions": self.deletions,
            "insertions": self.insertions,
            "ref_words": self.ref_words,
            "utterances": len(self.per_utterance),
        }


def wer(hyps: Sequence[str], refs: Sequence[str]) -> WerReport:
    """Corpus WER over lowercased whitespace words: total edits / total reference words."""
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses but {len(refs)} references")
    per = [edit_counts(normalize(h).split(), normalize(r).split()) for h, r in zip(hyps, refs)]
    total = sum(c.ref_words for c in per)
    if total == 0:
        raise ValueError("references contain no words")
    return WerReport(
        substitutions=sum(c.substitutions for c in per),
        deletions=sum(c.deletions for c in per),
        insertions=sum(c.insertions for c in per),
        ref_words=total,
        per_utterance=per,
    )


# latency

@dataclass
class SystemTiming:
    name: str
    wall_ms: List[float] = field(default_factory=list)
    model_ms: List[float] = field(default_factory=list)
    decoder_steps: List[int] = field(default_factory=list)
    change_positions: List[int] = field(default_factory=list)
    tokens_in: List[int] = field(default_factory=list)
    steps_stable: bool = True

    @property
    def median_ms(self) -> float:
        return statistics.median(self.wall_ms)

    @property
    def mean_ms(self) -> float:
        return statistics.fmean(self.wall_ms)

    @property
    def p95_ms(self) -> float:
        ordered = sorted(self.wall_ms)
        return ordered[min(len(ordered) - 1, int(0.95 * len(ordered)))]

    @property
    def model_median_ms(self) -> float:
        return statistics.median(self.model_ms)

    @property
    def total_steps(self) -> int:
        return sum(self.decoder_steps)

    @property
    def change_density(self) -> float:
        """Predicted CHANGE positions per input token."""
        return sum(self.change_positions) / max(1, sum(self.tokens_in))

    def summary(self) -> dict:
        return {
            "median_ms": self.median_ms,
            "mean_ms": self.mean_ms,
            "p95_ms": self.p95_ms,
            "model_median_ms": self.model_median_ms,
            "decoder_steps": self.total_steps,
            "change_density": self.change_density,
            "steps_stable": self.steps_stable,
        }


@dataclass
class LatencyReport:
    systems: Dict[str, SystemTiming]

    def speedup(self, system: str, baseline: str) -> float:
        return self.systems[baseline].median_ms / self.systems[system].median_ms

    def step_ratio(self, system: str, baseline: str) -> float:
        return self.systems[baseline].total_steps / max(1, self.systems[system].total_steps)

    def to_dict(self) -> dict:
        names = list(self.systems)
        return {
            "systems": {n: t.summary() for n, t in self.systems.items()},
            "speedups": {f"{a}_vs_{b}": self.speedup(a, b) for a in names for b in names if a != b},
        }


def bench_latency(systems: Sequence[Tuple[str, Callable]], corpus: Sequence[str],
                  warmup: int = 10, reps: int = 1) -> LatencyReport:
    """Time each system on ``corpus``, one utterance at a time.

    ``warmup`` utterance calls per system run unrecorded first. Each of the
    ``reps`` passes then times every utterance around the whole correction
    call with a monotonic clock. Decoder step counts come from the first
    pass; later passes only confirm they repeat.
    """
    if not systems:
        raise ValueError("need at least one system")
    if not corpus:
        raise ValueError("corpus is empty")
    timings = {}
    for name, fn in systems:
        for i in range(warmup):
            fn(corpus[i % len(corpus)])
        timing = SystemTiming(name)
        for rep in range(reps):
            for i, text in enumerate(corpus):
                start = time.perf_counter()
                result = fn(text)
                elapsed = time.perf_counter() - start
                timing.wall_ms.append(elapsed * 1e3)
                timing.model_ms.append(result.model_time * 1e3)
                if rep == 0:
                    timing.decoder_steps.append(result.decoder_steps)
                    timing.change_positions.append(result.num_change)
                    timing.tokens_in.append(result.tokens_in)
                elif result.decoder_steps != timing.decoder_steps[i]:
                    timing.steps_stable = False
        timings[name] = timing
    return LatencyReport(timings)


# correction ratio by error type

@dataclass
class CorrectionRatioReport:
    corrected: Dict[str, int]
    totals: Dict[str, int]
    sentence_accuracy: float
    excluded: int = 0

    def ratio(self, error_type: str) -> float:
        total = self.totals.get(error_type, 0)
        return self.corrected.get(error_type, 0) / total if total else float("nan")

    def to_dict(self) -> dict:
        return {
            "ratios": {t: self.ratio(t) for t in self.totals},
            "corrected": dict(self.corrected),
            "totals": dict(self.totals),
            "sentence_accuracy": self.sentence_accuracy,
            "excluded": self.excluded,
        }


def correction_ratio_by_type(results: Sequence[Tuple[CorpusPair, str]]) -> CorrectionRatioReport:
    """Share of sentences with each error type whose correction exactly matches the reference."""
    corrected = {t: 0 for t in ERROR_TYPES}
    totals = {t: 0 for t in ERROR_TYPES}
    exact = n = excluded = 0
    for pair, output in results:
        if pair.error_types is None:
            excluded += 1
            continue
        n += 1
        ok = normalize(output) == normalize(pair.ref_text)
        exact += ok
        for error_type in pair.error_types:
            totals[error_type] = totals.get(error_type, 0) + 1
            corrected[error_type] = corrected.get(error_type, 0) + ok
    totals = {t: v for t, v in totals.items() if v}
    corrected = {t: corrected[t] for t in totals}
    return CorrectionRatioReport(corrected, totals, exact / n if n else float("nan"), excluded)


def format_table(rows: Sequence[Sequence], header: Sequence[str]) -> str:
    cells = [[str(h) for h in header]] + [
        [f"{v:.4f}" if isinstance(v, float) else str(v) for v in row] for row in rows
    ]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
