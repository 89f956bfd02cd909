"""Collation of labeled examples into padded tensors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import torch

from .alignment import LabeledExample
from .tokenizer import BOS_ID, EOS_ID, PAD_ID


@dataclass
class Batch:
    x_ids: torch.Tensor  # [B, n]
    pad_mask: torch.Tensor  # [B, n] True at PAD
    tags: torch.Tensor  # [B, n], -100 at PAD
    span_batch: torch.Tensor  # [S]
    span_pos: torch.Tensor  # [S]
    span_in: torch.Tensor  # [S, L] BOS + target[:-1]
    span_out: torch.Tensor  # [S, L] target incl. EOS
    span_mask: torch.Tensor  # [S, L] float, 1 on real target steps

    def __len__(self) -> int:
        return self.x_ids.shape[0]


@dataclass
class Seq2SeqBatch:
    x_ids: torch.Tensor
    pad_mask: torch.Tensor
    y_in: torch.Tensor
    y_out: torch.Tensor
    y_mask: torch.Tensor

    def __len__(self) -> int:
        return self.x_ids.shape[0]


def _pad(rows: Sequence[Sequence[int]], width: int, fill: int = PAD_ID) -> torch.Tensor:
    out = torch.full((len(rows), width), fill, dtype=torch.long)
    for i, row in enumerate(rows):
        out[i, : len(row)] = torch.as_tensor(list(row), dtype=torch.long)
    return out


def _lengths_mask(lengths: Sequence[int], width: int) -> torch.Tensor:
    return torch.arange(width)[None, :] >= torch.as_tensor(lengths)[:, None]


def collate(examples: Sequence[LabeledExample], span_len: int | None = None) -> Batch:
    """Pad a list of labeled examples.

    Target spans are padded to ``span_len`` when given (the decoder's maximum
    output length), otherwise to the longest span in the batch.
    """
    lengths = [len(ex.x) for ex in examples]
    width = max(lengths) if lengths else 0
    x_ids = _pad([ex.x.ids for ex in examples], width)
    pad_mask = _lengths_mask(lengths, width)
    tags = _pad([[int(t) for t in ex.tags] for ex in examples], width, fill=-100)

    span_batch: List[int] = []
    span_pos: List[int] = []
    targets: List[List[int]] = []
    for b, ex in enumerate(examples):
        for pos in sorted(ex.targets):
            span_batch.append(b)
            span_pos.append(pos)
            targets.append(ex.targets[pos].ids)
    longest = max((len(t) for t in targets), default=0)
    span_width = longest if span_len is None else max(span_len, longest)
    span_in = _pad([[BOS_ID] + t[:-1] for t in targets], span_width)
    span_out = _pad(targets, span_width)
    span_mask = (~_lengths_mask([len(t) for t in targets], span_width)).float()
    return Batch(
        x_ids=x_ids,
        pad_mask=pad_mask,
        tags=tags,
        span_batch=torch.as_tensor(span_batch, dtype=torch.long),
        span_pos=torch.as_tensor(span_pos, dtype=torch.long),
        span_in=span_in,
        span_out=span_out,
        span_mask=span_mask,
    )


def collate_seq2seq(pairs: Sequence[tuple]) -> Seq2SeqBatch:
    """``pairs`` holds (asr ids, reference ids) tuples.

    The source gets a closing EOS so an empty ASR string still has one
    attendable position.
    """
    xs = [list(x) + [EOS_ID] for x, _ in pairs]
    ys = [list(y) + [EOS_ID] for _, y in pairs]
    x_width = max((len(x) for x in xs), default=0)
    y_width = max((len(y) for y in ys), default=0)
    return Seq2SeqBatch(
        x_ids=_pad(xs, x_width),
        pad_mask=_lengths_mask([len(x) for x in xs], x_width),
        y_in=_pad([[BOS_ID] + y[:-1] for y in ys], y_width),
        y_out=_pad(ys, y_width),
        y_mask=(~_lengths_mask([len(y) for y in ys], y_width)).float(),
    )
