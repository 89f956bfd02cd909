"""Constrained correction and the full-sequence baseline decoder."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import torch

from .alignment import C, LabeledExample, OperationTag, apply_edits, insert_dummies
from .model import ConstrainedCorrector, DecodeState, Seq2SeqBaseline
from .tokenizer import BOS_ID, EOS_ID, TokenSequence, Vocabulary, detokenize_ids, tokenize


@dataclass
class CorrectionResult:
    output_text: str
    tags: List[OperationTag] = field(default_factory=list)
    spans: Dict[int, List[int]] = field(default_factory=dict)
    decoder_steps: int = 0
    wall_time: float = 0.0
    model_time: float = 0.0
    tokens_in: int = 0
    tokens_out: int = 0

    @property
    def num_change(self) -> int:
        return sum(1 for t in self.tags if t == C)

    def to_record(self, vocab: Optional[Vocabulary] = None) -> dict:
        def show(ids):
            return [vocab.token(i) for i in ids] if vocab is not None else list(ids)

        return {
            "output": self.output_text,
            "tags": "".join(t.symbol for t in self.tags),
            "spans": {str(k): show(v) for k, v in sorted(self.spans.items())},
            "decoder_steps": self.decoder_steps,
            "wall_time": self.wall_time,
            "model_time": self.model_time,
            "tokens_in": self.tokens_in,
            "tokens_out": self.tokens_out,
        }


def _lstm_spans(model: ConstrainedCorrector, enc, positions: torch.Tensor, max_len: int):
    n_spans = positions.shape[0]
    batch_index = torch.zeros(n_spans, dtype=torch.long)
    state = model.init_lstm_state(enc, batch_index, positions)
    projected = model.decoder.attention.key(enc.vectors)
    prev = torch.full((n_spans,), BOS_ID, dtype=torch.long)
    active = torch.arange(n_spans)
    decoded: List[List[int]] = [[] for _ in range(n_spans)]
    steps = 0
    while active.numel() and steps < max_len:
        state, log_probs = model.lstm_decode_step(state, prev, enc, projected)
        steps += 1
        nxt = log_probs.argmax(-1)
        for span, tok in zip(active.tolist(), nxt.tolist()):
            decoded[span].append(tok)
        keep = nxt != EOS_ID
        if not keep.all():
            state = DecodeState(state.h[keep], state.c[keep], state.batch_index[keep])
            active, nxt = active[keep], nxt[keep]
        prev = nxt
    return decoded, steps


def _transformer_spans(model: ConstrainedCorrector, enc, positions: torch.Tensor, max_len: int):
    n_spans = positions.shape[0]
    batch_index = torch.zeros(n_spans, dtype=torch.long)
    k_vecs = enc.vectors[0, positions]
    prefix = torch.full((n_spans, 1), BOS_ID, dtype=torch.long)
    active = torch.arange(n_spans)
    decoded: List[List[int]] = [[] for _ in range(n_spans)]
    steps = 0
    while active.numel() and steps < max_len:
        log_probs = model.transformer_decode_step(prefix, k_vecs, enc, batch_index)
        steps += 1
        nxt = log_probs.argmax(-1)
        for span, tok in zip(active.tolist(), nxt.tolist()):
            decoded[span].append(tok)
        keep = nxt != EOS_ID
        prefix = torch.cat([prefix, nxt[:, None]], 1)[keep]
        k_vecs, batch_index, active = k_vecs[keep], batch_index[keep], active[keep]
    return decoded, steps


def decode_spans(model: ConstrainedCorrector, enc, positions: torch.Tensor,
                 max_len: Optional[int] = None, parallel: bool = True):
    """Greedy decoding of every CHANGE position of a single encoded utterance.

    With ``parallel`` all spans advance together, one batched decoder call per
    time step, and finished spans drop out. Otherwise each span is decoded on
    its own. Returns (token lists, decoder time steps executed).
    """
    max_len = model.config.max_decode_len if max_len is None else max_len
    run = _lstm_spans if model.config.decoder_kind == "lstm" else _transformer_spans
    if positions.numel() == 0:
        return [], 0
    if parallel:
        return run(model, enc, positions, max_len)
    decoded, steps = [], 0
    for i in range(positions.shape[0]):
        span, n = run(model, enc, positions[i:i + 1], max_len)
        decoded.extend(span)
        steps += n
    return decoded, steps


def assemble(x: TokenSequence, tags: Sequence[OperationTag], spans: Dict[int, List[int]]) -> List[int]:
    """Output ids: KEEP on a real token emits it, CHANGE emits its span up to EOS."""
    targets = {k: TokenSequence.from_ids(v) for k, v in spans.items()}
    return apply_edits(LabeledExample(x=x, tags=list(tags), targets=targets)).ids


@torch.inference_mode()
def correct(text: str, model: ConstrainedCorrector, vocab: Vocabulary,
            max_decode_len: Optional[int] = None, parallel: bool = True) -> CorrectionResult:
    start = time.perf_counter()
    x_raw = tokenize(text, vocab)
    if not len(x_raw):
        return CorrectionResult("", wall_time=time.perf_counter() - start)
    x = insert_dummies(x_raw)

    model_start = time.perf_counter()
    enc = model.encode(torch.tensor([x.ids]))
    tag_ids = model.operation_logits(enc)[0].argmax(-1)
    positions = (tag_ids == int(C)).nonzero().flatten()
    decoded, steps = decode_spans(model, enc, positions, max_decode_len, parallel)
    model_time = time.perf_counter() - model_start

    tags = [OperationTag(t) for t in tag_ids.tolist()]
    spans = dict(zip(positions.tolist(), decoded))
    out_ids = assemble(x, tags, spans)
    text_out = detokenize_ids(out_ids, vocab)
    return CorrectionResult(
        output_text=text_out,
        tags=tags,
        spans=spans,
        decoder_steps=steps,
        wall_time=time.perf_counter() - start,
        model_time=model_time,
        tokens_in=len(x_raw),
        tokens_out=len(out_ids),
    )


@torch.inference_mode()
def baseline_correct(text: str, model: Seq2SeqBaseline, vocab: Vocabulary,
                     max_len: Optional[int] = None) -> CorrectionResult:
    """Greedy full-sequence generation, capped at twice the input length."""
    start = time.perf_counter()
    x_raw = tokenize(text, vocab)
    if not len(x_raw):
        return CorrectionResult("", wall_time=time.perf_counter() - start)
    cap = 2 * len(x_raw) if max_len is None else max_len
    cap = min(cap, model.config.max_positions)

    model_start = time.perf_counter()
    enc = model.encode(torch.tensor([x_raw.ids + [EOS_ID]]))
    prefix = torch.tensor([[BOS_ID]])
    out_ids: List[int] = []
    steps = 0
    while steps < cap:
        tok = model.decode_step(prefix, enc).argmax(-1).item()
        steps += 1
        if tok == EOS_ID:
            break
        out_ids.append(tok)
        prefix = torch.cat([prefix, torch.tensor([[tok]])], 1)
    model_time = time.perf_counter() - model_start

    return CorrectionResult(
        output_text=detokenize_ids(out_ids, vocab),
        decoder_steps=steps,
        wall_time=time.perf_counter() - start,
        model_time=model_time,
        tokens_in=len(x_raw),
        tokens_out=len(out_ids),
    )


def system(model, vocab: Vocabulary, **kwargs) -> Callable[[str], CorrectionResult]:
    """A text -> CorrectionResult callable for either model kind."""
    fn = baseline_correct if model.kind == "seq2seq" else correct

    def run(text: str) -> CorrectionResult:
        return fn(text, model, vocab, **kwargs)

    return run


def correct_batch(texts: Sequence[str], model, vocab: Vocabulary, **kwargs) -> List[CorrectionResult]:
    """Correct each utterance independently; per-utterance timings are kept."""
    run = system(model, vocab, **kwargs)
    return [run(text) for text in texts]
