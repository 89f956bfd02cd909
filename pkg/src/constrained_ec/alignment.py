"""Dummy insertion, LCS alignment and KEEP/DELETE/CHANGE label construction.

A raw ASR sequence ``[w1, ..., wn]`` is interleaved with dummy slots into
``[G, w1, G, w2, ..., G, wn, G]``. Real token ``i`` therefore lives at
position ``2 * i + 1`` and the dummy in front of it at ``2 * i``; the
trailing dummy is at ``2 * n``. Dummies give insertions somewhere to live:
a reference chunk with no ASR counterpart becomes a CHANGE on the dummy of
that gap.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numba
import numpy as np

from .tokenizer import DUMMY, DUMMY_ID, EOS_ID, BOS_ID, PAD_ID, TokenSequence, Vocabulary


class MalformedExample(ValueError):
    pass


class OperationTag(enum.IntEnum):
    KEEP = 0
    DELETE = 1
    CHANGE = 2

    @property
    def symbol(self) -> str:
        return "KDC"[self.value]

    @classmethod
    def from_symbol(cls, symbol: str) -> "OperationTag":
        return cls("KDC".index(symbol))


K, D, C = OperationTag.KEEP, OperationTag.DELETE, OperationTag.CHANGE


@dataclass
class LabeledExample:
    x: TokenSequence
    tags: List[OperationTag]
    targets: Dict[int, TokenSequence] = field(default_factory=dict)
    t: TokenSequence = field(default_factory=TokenSequence)

    def validate(self) -> None:
        if len(self.tags) != len(self.x):
            raise MalformedExample("one tag per position required")
        change = {i for i, tag in enumerate(self.tags) if tag == C}
        if change != set(self.targets):
            raise MalformedExample(
                f"CHANGE positions {sorted(change)} != target keys {sorted(self.targets)}"
            )
        for k, span in self.targets.items():
            if not span.ids or span.ids[-1] != EOS_ID:
                raise MalformedExample(f"target at {k} is not EOS-terminated")
            if len(span.ids) < 2:
                raise MalformedExample(f"target at {k} is empty")
            if any(i in (PAD_ID, BOS_ID, DUMMY_ID) for i in span.ids):
                raise MalformedExample(f"target at {k} contains a reserved token")
        for i, tag in enumerate(self.tags):
            if tag == K and self.x.is_dummy[i]:
                raise MalformedExample(f"dummy position {i} tagged KEEP")
        if apply_edits(self).ids != self.t.ids:
            raise MalformedExample("edits do not reconstruct the reference")

    def to_record(self) -> dict:
        return {
            "x_tokens": list(self.x.surfaces),
            "tags": "".join(tag.symbol for tag in self.tags),
            "targets": {str(k): list(v.surfaces) for k, v in sorted(self.targets.items())},
            "t_tokens": list(self.t.surfaces),
        }

    @classmethod
    def from_record(cls, record: dict, vocab: Vocabulary) -> "LabeledExample":
        def seq(surfaces, dummies=False):
            ids = [vocab.id(s) for s in surfaces]
            flags = [dummies and s == DUMMY for s in surfaces]
            return TokenSequence(ids, list(surfaces), flags)

        return cls(
            x=seq(record["x_tokens"], dummies=True),
            tags=[OperationTag.from_symbol(s) for s in record["tags"]],
            targets={int(k): seq(v) for k, v in record["targets"].items()},
            t=seq(record["t_tokens"]),
        )


def insert_dummies(x: TokenSequence) -> TokenSequence:
    if any(x.is_dummy):
        raise ValueError("sequence already contains dummy tokens")
    ids, surfaces, flags = [DUMMY_ID], [DUMMY], [True]
    for idx, surface in zip(x.ids, x.surfaces):
        ids += [idx, DUMMY_ID]
        surfaces += [surface, DUMMY]
        flags += [False, True]
    return TokenSequence(ids, surfaces, flags)


@numba.njit(cache=True)
def fill_lcs_suffix_table(a, b, table):
    """Write LCS lengths of all suffix pairs into ``table[:n + 1, :m + 1]``.

    ``table[i, j]`` is the LCS length of ``a[i:]`` and ``b[j:]``; the table
    may be larger than needed, so one buffer serves many calls.
    """
    n, m = a.shape[0], b.shape[0]
    table[n, : m + 1] = 0
    for i in range(n - 1, -1, -1):
        row, below, ai = table[i], table[i + 1], a[i]
        right = row[m] = 0
        for j in range(m - 1, -1, -1):
            if ai == b[j]:
                right = below[j + 1] + 1
            elif below[j] > right:
                right = below[j]
            row[j] = right
    return table[0, 0]


@numba.njit(cache=True)
def lcs_suffix_table(a, b):
    table = np.empty((a.shape[0] + 1, b.shape[0] + 1), dtype=np.int32)
    fill_lcs_suffix_table(a, b, table)
    return table


def _as_codes(a, b):
    if isinstance(a, TokenSequence):
        a = a.ids
    if isinstance(b, TokenSequence):
        b = b.ids
    codes = {}
    a = np.fromiter((codes.setdefault(x, len(codes)) for x in a), dtype=np.int64)
    b = np.fromiter((codes.setdefault(x, len(codes)) for x in b), dtype=np.int64)
    return a, b


def lcs_align(a, b) -> List[Tuple[int, int]]:
    """Leftmost maximal alignment between two token sequences.

    Accepts TokenSequences or plain sequences of hashable tokens. Among all
    maximum common subsequences, returns the one whose ``a`` indices are
    lexicographically smallest, each paired with its earliest ``b`` partner
    that still leaves an optimal remainder.
    """
    a, b = _as_codes(a, b)
    table = lcs_suffix_table(a, b)
    pairs = []
    i = j = 0
    n, m = len(a), len(b)
    while i < n and j < m and table[i, j]:
        target = table[i, j] - 1
        for k in range(j, m):
            if a[i] == b[k] and table[i + 1, k + 1] == target:
                pairs.append((i, k))
                j = k + 1
                break
        i += 1
    return pairs


def _span(t: TokenSequence, start: int, stop: int) -> TokenSequence:
    ids = t.ids[start:stop] + [EOS_ID]
    surfaces = t.surfaces[start:stop] + ["<eos>"]
    return TokenSequence(ids, surfaces, [False] * len(ids))


def make_labels(x_raw: TokenSequence, t: TokenSequence) -> LabeledExample:
    x = insert_dummies(x_raw)
    n, m = len(x_raw), len(t)
    tags = [D] * len(x)
    targets: Dict[int, TokenSequence] = {}

    pairs = lcs_align(x_raw, t)
    for i, _ in pairs:
        tags[2 * i + 1] = K

    # walk the gaps between consecutive matches, with sentinels at both ends
    prev_i, prev_j = -1, -1
    for next_i, next_j in pairs + [(n, m)]:
        xs = range(prev_i + 1, next_i)
        if next_j > prev_j + 1:
            pos = 2 * xs[0] + 1 if xs else 2 * next_i
            tags[pos] = C
            targets[pos] = _span(t, prev_j + 1, next_j)
        prev_i, prev_j = next_i, next_j

    return LabeledExample(x=x, tags=tags, targets=targets, t=t)


def apply_edits(labeled: LabeledExample) -> TokenSequence:
    ids, surfaces = [], []
    x = labeled.x
    for pos, tag in enumerate(labeled.tags):
        if tag == K:
            if not x.is_dummy[pos]:
                ids.append(x.ids[pos])
                surfaces.append(x.surfaces[pos])
        elif tag == C:
            try:
                span = labeled.targets[pos]
            except KeyError:
                raise MalformedExample(f"CHANGE at position {pos} has no target") from None
            for idx, surface in zip(span.ids, span.surfaces):
                if idx == EOS_ID:
                    break
                ids.append(idx)
                surfaces.append(surface)
    return TokenSequence(ids, surfaces, [False] * len(ids))
