"""Small builders shared by several test modules."""

import torch

from constrained_ec.alignment import make_labels
from constrained_ec.batching import collate
from constrained_ec.model import ConstrainedCorrector, ModelConfig
from constrained_ec.tokenizer import TokenSequence


def tiny_config(kind="transformer", **overrides):
    cfg = dict(vocab_size=17, hidden_dim=8, encoder_layers=1, encoder_heads=2,
               feedforward_dim=16, max_positions=32, decoder_kind=kind, dropout=0.0)
    cfg.update(overrides)
    return ModelConfig(**cfg)


def tiny_model(kind="transformer", seed=0, dtype=torch.float32, **overrides):
    torch.manual_seed(seed)
    model = ConstrainedCorrector(tiny_config(kind, **overrides)).to(dtype)
    model.eval()
    return model


def two_span_example():
    """x = [5 6 7 8], t = [5 9 7 10 11 8]: two CHANGE spans."""
    x = TokenSequence.from_ids([5, 6, 7, 8])
    t = TokenSequence.from_ids([5, 9, 7, 10, 11, 8])
    return make_labels(x, t)


def two_span_batch():
    ex = two_span_example()
    assert len(ex.targets) == 2
    return collate([ex])
