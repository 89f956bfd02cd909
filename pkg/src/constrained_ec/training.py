"""Label construction, batching and the optimisation loop."""

from __future__ import annotations

import copy
import json
import logging
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional, Sequence

import torch

from .alignment import LabeledExample, make_labels
from .batching import Batch, collate, collate_seq2seq
from .corpus import CorpusPair
from .model import ConstrainedCorrector, ModelConfig, Seq2SeqBaseline, save_checkpoint
from .tokenizer import Vocabulary, tokenize

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 3e-4
    weight_decay: float = 0.0
    alpha: float = 3.0
    seed: int = 0
    grad_clip: float = 1.0
    valid_fraction: float = 0.1
    checkpoint_path: Optional[str] = None
    log_path: Optional[str] = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not 0.0 <= self.valid_fraction < 1.0:
            raise ValueError("valid_fraction must be in [0, 1)")


@dataclass
class TrainResult:
    model: torch.nn.Module
    history: List[dict] = field(default_factory=list)
    best_epoch: int = 0
    skipped: int = 0


def label_pairs(pairs: Sequence[CorpusPair], vocab: Vocabulary) -> List[LabeledExample]:
    return [make_labels(tokenize(p.asr_text, vocab), tokenize(p.ref_text, vocab)) for p in pairs]


def fits(example: LabeledExample, model_config: ModelConfig) -> bool:
    if len(example.x) > model_config.max_positions:
        return False
    return all(len(span) <= model_config.max_decode_len for span in example.targets.values())


def filter_examples(examples: Sequence[LabeledExample], model_config: ModelConfig):
    kept = [ex for ex in examples if fits(ex, model_config)]
    skipped = len(examples) - len(kept)
    if skipped:
        logger.warning("skipping %d examples longer than max_positions or max_decode_len", skipped)
    return kept, skipped


def bucket_order(lengths: Sequence[int], batch_size: int, seed: int) -> List[List[int]]:
    """Index batches of similar length, in a seeded random order."""
    rng = random.Random(seed)
    keys = [rng.random() for _ in lengths]
    order = sorted(range(len(lengths)), key=lambda i: (lengths[i], keys[i]))
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    rng.shuffle(chunks)
    return chunks


def make_batches(examples: Sequence[LabeledExample], batch_size: int, seed: int = 0,
                 model_config: Optional[ModelConfig] = None) -> Iterator[Batch]:
    """Yield padded batches; examples that do not fit ``model_config`` are skipped."""
    span_len = None
    if model_config is not None:
        examples, _ = filter_examples(examples, model_config)
        span_len = model_config.max_decode_len
    for chunk in bucket_order([len(ex.x) for ex in examples], batch_size, seed):
        yield collate([examples[i] for i in chunk], span_len)


def _constrained_stats(model: ConstrainedCorrector, batch: Batch, alpha: float) -> dict:
    tag_log_probs, span_logits = model.forward_batch(batch)
    loss_oper, loss_dec = model.losses_from_outputs(batch, tag_log_probs, span_logits)
    valid = ~batch.pad_mask
    tag_hits = ((tag_log_probs.argmax(-1) == batch.tags) & valid).sum().item()
    tok_mask = batch.span_mask.bool()
    tok_hits = ((span_logits.argmax(-1) == batch.span_out) & tok_mask).sum().item() if span_logits.numel() else 0
    return {
        "loss": alpha * loss_oper + loss_dec,
        "loss_oper": loss_oper.item(),
        "loss_dec": loss_dec.item(),
        "tag_hits": tag_hits,
        "tag_total": valid.sum().item(),
        "tok_hits": tok_hits,
        "tok_total": tok_mask.sum().item(),
    }


def _seq2seq_stats(model: Seq2SeqBaseline, batch, alpha: float) -> dict:
    enc = model.encode(batch.x_ids, batch.pad_mask)
    logits = model.decoder_logits(batch.y_in, enc)
    mask = batch.y_mask.bool()
    loss = -(logits.log_softmax(-1).gather(-1, batch.y_out[..., None]).squeeze(-1) * batch.y_mask).sum()
    return {
        "loss": loss,
        "loss_oper": 0.0,
        "loss_dec": loss.item(),
        "tag_hits": 0,
        "tag_total": 0,
        "tok_hits": ((logits.argmax(-1) == batch.y_out) & mask).sum().item(),
        "tok_total": mask.sum().item(),
    }


def _summarise(totals: dict, n: int, epoch: int, split: str) -> dict:
    n = max(n, 1)
    return {
        "epoch": epoch,
        "split": split,
        "loss_oper": totals["loss_oper"] / n,
        "loss_dec": totals["loss_dec"] / n,
        "tag_acc": totals["tag_hits"] / totals["tag_total"] if totals["tag_total"] else None,
        "token_acc": totals["tok_hits"] / totals["tok_total"] if totals["tok_total"] else None,
    }


def _run_epoch(model, batches, stats_fn, alpha, optimizer=None, grad_clip=None):
    totals = dict.fromkeys(("loss", "loss_oper", "loss_dec", "tag_hits", "tag_total", "tok_hits", "tok_total"), 0.0)
    n = 0
    for batch in batches:
        stats = stats_fn(model, batch, alpha)
        loss = stats.pop("loss")
        if optimizer is not None:
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss {loss.item()} after {n} examples")
            optimizer.zero_grad()
            (loss / len(batch)).backward()
            if grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
            optimizer.step()
        totals["loss"] += loss.item()
        for key, value in stats.items():
            totals[key] += value
        n += len(batch)
    return totals, n


def _check_finite(model):
    for name, param in model.named_parameters():
        if not torch.isfinite(param).all():
            raise TrainingDiverged(f"parameter {name} became non-finite")


def _split(items: list, fraction: float, seed: int):
    if fraction <= 0 or len(items) < 2:
        return items, []
    order = list(range(len(items)))
    random.Random(seed).shuffle(order)
    n_valid = max(1, int(round(len(items) * fraction)))
    valid = set(order[:n_valid])
    return [x for i, x in enumerate(items) if i not in valid], [items[i] for i in order[:n_valid]]


def _fit(model, train_items, valid_items, collate_fn, stats_fn, config: TrainConfig,
         vocab: Vocabulary, lengths_fn: Callable, check_fn: Optional[Callable] = None,
         stop_when: Optional[Callable] = None) -> TrainResult:
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.learning_rate,
                                  weight_decay=config.weight_decay)
    log_fh = open(config.log_path, "w", encoding="utf-8") if config.log_path else None
    history: List[dict] = []
    best_loss, best_epoch, best_state = math.inf, 0, None
    check_rng = random.Random(config.seed)

    def batches(items, seed):
        lengths = [lengths_fn(x) for x in items]
        for chunk in bucket_order(lengths, config.batch_size, seed):
            yield collate_fn([items[i] for i in chunk])

    try:
        for epoch in range(1, config.epochs + 1):
            if check_fn is not None and train_items:
                for item in check_rng.sample(train_items, min(16, len(train_items))):
                    check_fn(item)
            model.train()
            totals, n = _run_epoch(model, batches(train_items, config.seed * 100003 + epoch),
                                   stats_fn, config.alpha, optimizer, config.grad_clip)
            _check_finite(model)
            records = [_summarise(totals, n, epoch, "train")]
            score = totals["loss"] / max(n, 1)
            if valid_items:
                model.eval()
                with torch.no_grad():
                    vtotals, vn = _run_epoch(model, batches(valid_items, 0), stats_fn, config.alpha)
                records.append(_summarise(vtotals, vn, epoch, "valid"))
                score = vtotals["loss"] / max(vn, 1)
            for record in records:
                history.append(record)
                logger.info("%s", record)
                if log_fh:
                    log_fh.write(json.dumps(record) + "\n")
            if score < best_loss or not valid_items:
                best_loss, best_epoch = score, epoch
                best_state = copy.deepcopy(model.state_dict())
                if config.checkpoint_path:
                    save_checkpoint(config.checkpoint_path, model, vocab.digest(),
                                    {"epoch": epoch, "score": score})
            if stop_when is not None:
                model.eval()
                if stop_when(epoch, model):
                    break
    finally:
        if log_fh:
            log_fh.close()
    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model=model, history=history, best_epoch=best_epoch)


def train(pairs: Sequence[CorpusPair], config: TrainConfig, model_config: ModelConfig,
          vocab: Vocabulary, valid_pairs: Optional[Sequence[CorpusPair]] = None,
          stop_when: Optional[Callable] = None) -> TrainResult:
    """Train a constrained corrector on ``pairs`` with the combined tag + span loss.

    With no ``valid_pairs``, ``config.valid_fraction`` of the data is held out;
    the returned model is the best epoch by validation loss (the last epoch if
    nothing is held out). ``stop_when(epoch, model)`` is called after every
    epoch with the model in eval mode; returning True ends training early.
    """
    if model_config.vocab_size != len(vocab):
        raise ValueError("model_config.vocab_size does not match the vocabulary")
    torch.manual_seed(config.seed)
    examples, skipped = filter_examples(label_pairs(pairs, vocab), model_config)
    if valid_pairs is None:
        train_ex, valid_ex = _split(examples, config.valid_fraction, config.seed)
    else:
        train_ex = examples
        valid_ex, _ = filter_examples(label_pairs(valid_pairs, vocab), model_config)
    if not train_ex:
        raise ValueError("no trainable examples")
    model = ConstrainedCorrector(model_config)
    result = _fit(
        model, train_ex, valid_ex,
        lambda items: collate(items, model_config.max_decode_len),
        _constrained_stats, config, vocab,
        lengths_fn=lambda ex: len(ex.x),
        check_fn=LabeledExample.validate,
        stop_when=stop_when,
    )
    result.skipped = skipped
    return result


def train_baseline(pairs: Sequence[CorpusPair], config: TrainConfig, model_config: ModelConfig,
                   vocab: Vocabulary, valid_pairs: Optional[Sequence[CorpusPair]] = None,
                   stop_when: Optional[Callable] = None) -> TrainResult:
    """Train the full-sequence encoder-decoder baseline."""
    if model_config.vocab_size != len(vocab):
        raise ValueError("model_config.vocab_size does not match the vocabulary")
    torch.manual_seed(config.seed)
    limit = model_config.max_positions - 1

    def encode(ps):
        items = [(tokenize(p.asr_text, vocab).ids, tokenize(p.ref_text, vocab).ids) for p in ps]
        kept = [it for it in items if len(it[0]) <= limit and len(it[1]) <= limit]
        return kept, len(items) - len(kept)

    items, skipped = encode(pairs)
    if valid_pairs is None:
        train_items, valid_items = _split(items, config.valid_fraction, config.seed)
    else:
        train_items, (valid_items, _) = items, encode(valid_pairs)
    if not train_items:
        raise ValueError("no trainable examples")
    model = Seq2SeqBaseline(model_config)
    result = _fit(model, train_items, valid_items, collate_seq2seq, _seq2seq_stats, config, vocab,
                  lengths_fn=lambda it: len(it[0]), stop_when=stop_when)
    result.skipped = skipped
    return result


@torch.no_grad()
def evaluate_loss(model: ConstrainedCorrector, examples: Sequence[LabeledExample],
                  alpha: float = 3.0, batch_size: int = 64) -> float:
    """Mean per-example combined loss in eval mode."""
    model.eval()
    totals, n = _run_epoch(model, make_batches(examples, batch_size, 0, model.config),
                           _constrained_stats, alpha)
    return totals["loss"] / max(n, 1)
