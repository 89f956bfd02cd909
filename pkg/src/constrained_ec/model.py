"""Encoder, operation predictor, constrained span decoders and losses.

The corrector encodes the dummied ASR tokens, tags every position with
KEEP/DELETE/CHANGE and runs a decoder only for CHANGE positions. Each CHANGE
position ``k`` seeds its own span: the LSTM decoder starts from
``h0 = e_k, c0 = 0``; the transformer decoder concatenates ``e_k`` onto
every prefix embedding before projecting back to the model width.

Spans from many utterances are flattened into one span batch. ``span_batch``
maps every span to the utterance it belongs to, ``span_pos`` to its CHANGE
position in that utterance.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

NUM_TAGS = 3


class SequenceTooLong(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    hidden_dim: int = 64
    encoder_layers: int = 2
    encoder_heads: int = 4
    feedforward_dim: int = 256
    max_positions: int = 128
    decoder_kind: str = "transformer"
    decoder_layers: int = 1
    max_decode_len: int = 10
    alpha: float = 3.0
    dropout: float = 0.1
    tag_class_weights: Optional[Tuple[float, float, float]] = None

    def __post_init__(self):
        if self.decoder_kind not in ("lstm", "transformer"):
            raise ValueError(f"unknown decoder_kind {self.decoder_kind!r}")
        if self.hidden_dim % self.encoder_heads:
            raise ValueError("hidden_dim must be divisible by encoder_heads")
        if self.max_decode_len < 1:
            raise ValueError("max_decode_len must be >= 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.tag_class_weights is not None:
            self.tag_class_weights = tuple(float(w) for w in self.tag_class_weights)
            if len(self.tag_class_weights) != NUM_TAGS:
                raise ValueError("tag_class_weights needs one weight per tag")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class EncodedSequence:
    vectors: torch.Tensor  # [B, n, d]
    pad_mask: torch.Tensor  # [B, n], True at PAD

    def __len__(self) -> int:
        return self.vectors.shape[1]


@dataclass
class DecodeState:
    """LSTM span state; ``batch_index`` points each span at its utterance."""

    h: torch.Tensor
    c: torch.Tensor
    batch_index: torch.Tensor
    context: Optional[torch.Tensor] = None
    attention: Optional[torch.Tensor] = None


class TextEncoder(nn.Module):
    """Learned word + position embeddings followed by a post-norm transformer stack."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.hidden_dim
        self.max_positions = cfg.max_positions
        self.word_emb = nn.Embedding(cfg.vocab_size, d)
        self.pos_emb = nn.Embedding(cfg.max_positions, d)
        self.emb_norm = nn.LayerNorm(d)
        self.dropout = nn.Dropout(cfg.dropout)
        layer = nn.TransformerEncoderLayer(
            d, cfg.encoder_heads, cfg.feedforward_dim, cfg.dropout,
            activation="gelu", batch_first=True,
        )
        self.stack = nn.TransformerEncoder(layer, cfg.encoder_layers, enable_nested_tensor=False)

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        """WE + PE for a [B, t] id tensor; positions start at 0."""
        if ids.shape[1] > self.max_positions:
            raise SequenceTooLong(f"{ids.shape[1]} tokens exceeds max_positions={self.max_positions}")
        positions = torch.arange(ids.shape[1], device=ids.device)
        return self.word_emb(ids) + self.pos_emb(positions)[None]

    def forward(self, ids: torch.Tensor, pad_mask: torch.Tensor) -> EncodedSequence:
        hidden = self.dropout(self.emb_norm(self.embed(ids)))
        hidden = self.stack(hidden, src_key_padding_mask=pad_mask)
        return EncodedSequence(hidden, pad_mask)


class AdditiveAttention(nn.Module):
    """``score_j = v . tanh(W_q q + W_k k_j)`` with PAD keys masked out."""

    def __init__(self, d: int):
        super().__init__()
        self.query = nn.Linear(d, d, bias=False)
        self.key = nn.Linear(d, d, bias=False)
        self.v = nn.Parameter(torch.empty(d))
        nn.init.uniform_(self.v, -d ** -0.5, d ** -0.5)

    def forward(self, query, values, pad_mask, projected_keys=None):
        if projected_keys is None:
            projected_keys = self.key(values)
        scores = torch.tanh(self.query(query)[:, None, :] + projected_keys) @ self.v
        weights = scores.masked_fill(pad_mask, float("-inf")).softmax(-1)
        context = (weights[:, :, None] * values).sum(1)
        return context, weights


class LstmSpanDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.hidden_dim
        self.cell = nn.LSTMCell(d, d)
        self.attention = AdditiveAttention(d)
        self.out = nn.Linear(2 * d, cfg.vocab_size)

    def step(self, prev_emb, h, c, memory, memory_pad, projected_keys=None):
        h, c = self.cell(prev_emb, (h, c))
        context, weights = self.attention(h, memory, memory_pad, projected_keys)
        logits = self.out(torch.cat([context, h], -1))
        return h, c, context, weights, logits


class TransformerSpanDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.hidden_dim
        self.fuse = nn.Linear(2 * d, d)
        self.stack = causal_decoder(cfg)
        self.out = nn.Linear(d, cfg.vocab_size)

    def forward(self, prefix_emb, k_vecs, memory, memory_pad):
        """Logits at every prefix position: [S, t, V]."""
        t = prefix_emb.shape[1]
        fused = self.fuse(torch.cat([prefix_emb, k_vecs[:, None, :].expand(-1, t, -1)], -1))
        causal = torch.ones(t, t, dtype=torch.bool, device=fused.device).triu(1)
        hidden = self.stack(fused, memory, tgt_mask=causal, memory_key_padding_mask=memory_pad)
        return self.out(hidden)


def causal_decoder(cfg: ModelConfig) -> nn.TransformerDecoder:
    layer = nn.TransformerDecoderLayer(
        cfg.hidden_dim, cfg.encoder_heads, cfg.feedforward_dim, cfg.dropout,
        activation="gelu", batch_first=True,
    )
    return nn.TransformerDecoder(layer, cfg.decoder_layers)


def operation_loss(log_probs, gold, mask, reduction="sum", class_weights=None):
    """Negative log-likelihood of the gold tags over non-PAD positions.

    ``mask`` is True where a position counts (the complement of a PAD mask).
    """
    gold = gold.masked_fill(~mask, -100)
    weight = None
    if class_weights is not None:
        weight = torch.as_tensor(class_weights, dtype=log_probs.dtype, device=log_probs.device)
    loss = F.nll_loss(
        log_probs.reshape(-1, log_probs.shape[-1]), gold.reshape(-1),
        weight=weight, ignore_index=-100, reduction="sum",
    )
    if reduction == "mean":
        loss = loss / mask.sum().clamp(min=1)
    return loss


def span_nll(logits, span_out, span_mask):
    """Summed token NLL of teacher-forced span logits."""
    if logits.numel() == 0:
        return logits.sum() * 0.0
    log_probs = logits.log_softmax(-1)
    picked = log_probs.gather(-1, span_out[..., None]).squeeze(-1)
    return -(picked * span_mask).sum()


class ConstrainedCorrector(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.config = cfg
        self.encoder = TextEncoder(cfg)
        self.op_head = nn.Linear(cfg.hidden_dim, NUM_TAGS)
        if cfg.decoder_kind == "lstm":
            self.decoder = LstmSpanDecoder(cfg)
        else:
            self.decoder = TransformerSpanDecoder(cfg)

    @property
    def kind(self) -> str:
        return "constrained"

    def encode(self, ids, pad_mask=None) -> EncodedSequence:
        if pad_mask is None:
            pad_mask = torch.zeros_like(ids, dtype=torch.bool)
        return self.encoder(ids, pad_mask)

    def operation_logits(self, enc: EncodedSequence) -> torch.Tensor:
        return self.op_head(enc.vectors)

    def predict_operations(self, enc: EncodedSequence) -> torch.Tensor:
        return self.operation_logits(enc).softmax(-1)

    # LSTM variant

    def init_lstm_state(self, enc: EncodedSequence, span_batch, span_pos) -> DecodeState:
        h = enc.vectors[span_batch, span_pos]
        return DecodeState(h=h, c=torch.zeros_like(h), batch_index=span_batch)

    def lstm_decode_step(self, state: DecodeState, prev_tokens, enc: EncodedSequence,
                         projected_keys=None):
        """One LSTM step for every span in ``state``; returns (state, log-probs)."""
        if state is None or state.h is None:
            raise RuntimeError("decode state must be initialised from the span's encoding")
        memory = enc.vectors[state.batch_index]
        memory_pad = enc.pad_mask[state.batch_index]
        if projected_keys is not None:
            projected_keys = projected_keys[state.batch_index]
        h, c, context, weights, logits = self.decoder.step(
            self.encoder.word_emb(prev_tokens), state.h, state.c, memory, memory_pad, projected_keys,
        )
        new_state = DecodeState(h, c, state.batch_index, context, weights)
        return new_state, logits.log_softmax(-1)

    # transformer variant

    def transformer_decode_step(self, prefix, k_vecs, enc: EncodedSequence, span_batch):
        """Next-token log-probs for each span's prefix (which starts with BOS)."""
        if prefix.shape[1] > self.config.max_decode_len:
            raise SequenceTooLong(
                f"prefix of {prefix.shape[1]} exceeds max_decode_len={self.config.max_decode_len}"
            )
        logits = self.transformer_span_logits(prefix, k_vecs, enc, span_batch)
        return logits[:, -1].log_softmax(-1)

    def transformer_span_logits(self, prefix, k_vecs, enc, span_batch):
        return self.decoder(
            self.encoder.embed(prefix), k_vecs,
            enc.vectors[span_batch], enc.pad_mask[span_batch],
        )

    # teacher forcing

    def span_logits(self, enc: EncodedSequence, span_batch, span_pos, span_in):
        """Teacher-forced logits [S, L, V] for gold span inputs ``span_in``."""
        if self.config.decoder_kind == "transformer":
            k_vecs = enc.vectors[span_batch, span_pos]
            return self.transformer_span_logits(span_in, k_vecs, enc, span_batch)
        state = self.init_lstm_state(enc, span_batch, span_pos)
        projected = self.decoder.attention.key(enc.vectors)
        steps = []
        for t in range(span_in.shape[1]):
            state, _ = self.lstm_decode_step(state, span_in[:, t], enc, projected)
            steps.append(self.decoder.out(torch.cat([state.context, state.h], -1)))
        if not steps:
            return enc.vectors.new_zeros(0, 0, self.config.vocab_size)
        return torch.stack(steps, 1)

    def forward_batch(self, batch):
        """Tag log-probs [B, n, 3] and teacher-forced span logits [S, L, V]."""
        enc = self.encode(batch.x_ids, batch.pad_mask)
        tag_log_probs = self.operation_logits(enc).log_softmax(-1)
        if batch.span_batch.numel() == 0:
            span_logits = enc.vectors.new_zeros(0, batch.span_in.shape[1], self.config.vocab_size)
        else:
            span_logits = self.span_logits(enc, batch.span_batch, batch.span_pos, batch.span_in)
        return tag_log_probs, span_logits

    def losses_from_outputs(self, batch, tag_log_probs, span_logits):
        loss_oper = operation_loss(
            tag_log_probs, batch.tags, ~batch.pad_mask, class_weights=self.config.tag_class_weights,
        )
        return loss_oper, span_nll(span_logits, batch.span_out, batch.span_mask)

    def losses(self, batch) -> Tuple[torch.Tensor, torch.Tensor]:
        """Summed (operation, decoder) losses for a collated batch."""
        return self.losses_from_outputs(batch, *self.forward_batch(batch))

    def total_loss(self, batch, alpha: Optional[float] = None) -> torch.Tensor:
        alpha = self.config.alpha if alpha is None else alpha
        if not alpha > 0:
            raise ValueError("alpha must be > 0")
        loss_oper, loss_dec = self.losses(batch)
        return alpha * loss_oper + loss_dec


class Seq2SeqBaseline(nn.Module):
    """Plain encoder-decoder generating the full corrected sequence."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.config = cfg
        self.encoder = TextEncoder(cfg)
        self.decoder = causal_decoder(cfg)
        self.out = nn.Linear(cfg.hidden_dim, cfg.vocab_size)

    @property
    def kind(self) -> str:
        return "seq2seq"

    def encode(self, ids, pad_mask=None) -> EncodedSequence:
        if pad_mask is None:
            pad_mask = torch.zeros_like(ids, dtype=torch.bool)
        return self.encoder(ids, pad_mask)

    def decoder_logits(self, prefix, enc: EncodedSequence):
        t = prefix.shape[1]
        causal = torch.ones(t, t, dtype=torch.bool, device=prefix.device).triu(1)
        hidden = self.decoder(
            self.encoder.embed(prefix), enc.vectors,
            tgt_mask=causal, memory_key_padding_mask=enc.pad_mask,
        )
        return self.out(hidden)

    def decode_step(self, prefix, enc: EncodedSequence):
        return self.decoder_logits(prefix, enc)[:, -1].log_softmax(-1)

    def total_loss(self, batch, alpha=None) -> torch.Tensor:
        enc = self.encode(batch.x_ids, batch.pad_mask)
        logits = self.decoder_logits(batch.y_in, enc)
        return span_nll(logits, batch.y_out, batch.y_mask)


def build_model(cfg: ModelConfig, kind: str = "constrained") -> nn.Module:
    if kind == "constrained":
        return ConstrainedCorrector(cfg)
    if kind == "seq2seq":
        return Seq2SeqBaseline(cfg)
    raise ValueError(f"unknown model kind {kind!r}")


# checkpoint container: magic, u32 LE header length, JSON header, raw <f4 tensors

_MAGIC = b"CECKPT01"


def save_checkpoint(path, model: nn.Module, vocab_digest: str, extra: Optional[dict] = None) -> None:
    tensors, blobs, offset = [], [], 0
    for name, tensor in model.state_dict().items():
        data = tensor.detach().cpu().numpy().astype("<f4").tobytes()
        tensors.append({"name": name, "shape": list(tensor.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "kind": model.kind,
        "config": model.config.to_dict(),
        "vocab_sha256": vocab_digest,
        "tensors": tensors,
        "extra": extra or {},
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path, vocab_digest: Optional[str] = None):
    """Rebuild a model from ``path``; returns ``(model, header)``."""
    blob = Path(path).read_bytes()
    if blob[:8] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12:12 + hlen])
    if vocab_digest is not None and header["vocab_sha256"] != vocab_digest:
        raise CheckpointError(f"{path}: checkpoint was trained with a different vocabulary")
    cfg = header["config"]
    if cfg.get("tag_class_weights") is not None:
        cfg["tag_class_weights"] = tuple(cfg["tag_class_weights"])
    model = build_model(ModelConfig(**cfg), header["kind"])
    expected = model.state_dict()
    body = blob[12 + hlen:]
    state = {}
    for entry in header["tensors"]:
        name = entry["name"]
        if name not in expected:
            raise CheckpointError(f"{path}: unexpected tensor {name}")
        if list(expected[name].shape) != entry["shape"]:
            raise CheckpointError(
                f"{path}: tensor {name} has shape {entry['shape']}, config implies {list(expected[name].shape)}"
            )
        chunk = body[entry["offset"]:entry["offset"] + entry["nbytes"]]
        array = np.frombuffer(chunk, dtype="<f4").reshape(entry["shape"])
        state[name] = torch.from_numpy(array.copy())
    missing = set(expected) - set(state)
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)}")
    model.load_state_dict(state)
    model.eval()
    return model, header
