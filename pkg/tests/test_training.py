import hashlib
import json

import pytest
import torch

from constrained_ec.alignment import make_labels
from constrained_ec.corpus import CorpusPair, ErrorProfile, generate_references, inject_errors
from constrained_ec.model import CheckpointError, ModelConfig, load_checkpoint, save_checkpoint
from constrained_ec.tokenizer import PAD_ID, TokenSequence, build_vocab
from constrained_ec.training import (
    TrainConfig, TrainingDiverged, bucket_order, evaluate_loss, label_pairs, make_batches, train,
    train_baseline,
)

from helpers import tiny_model


def small_config(vocab, kind="transformer", **kw):
    cfg = dict(vocab_size=len(vocab), hidden_dim=32, encoder_layers=1, encoder_heads=2,
               feedforward_dim=64, decoder_kind=kind, dropout=0.0)
    cfg.update(kw)
    return ModelConfig(**cfg)


@pytest.fixture(scope="module")
def corpus():
    refs = generate_references(120, 0)
    pairs = inject_errors(refs, ErrorProfile(grammatical=0.05, similar_sound=0.05, delete=0.03), 1)
    vocab = build_vocab([p.ref_text for p in pairs] + [p.asr_text for p in pairs], 400, 1)
    return pairs, vocab


def ex(n):
    return make_labels(TokenSequence.from_ids(list(range(5, 5 + n))),
                       TokenSequence.from_ids(list(range(5, 5 + n))))


def test_batch_padding():
    batches = list(make_batches([ex(2), ex(3)], batch_size=2))
    assert len(batches) == 1
    b = batches[0]
    assert b.x_ids.shape == (2, 7)
    assert b.pad_mask.tolist()[0] == [False] * 5 + [True] * 2
    assert b.x_ids[0, 5:].tolist() == [PAD_ID, PAD_ID]
    assert b.tags[0, 5:].tolist() == [-100, -100]


def test_span_padding_to_max_decode_len():
    pair = make_labels(TokenSequence.from_ids([5, 6]), TokenSequence.from_ids([5, 7]))
    cfg = ModelConfig(vocab_size=17, hidden_dim=8, encoder_heads=2, max_decode_len=6)
    b = next(make_batches([pair], 4, model_config=cfg))
    assert b.span_in.shape == (1, 6)
    assert b.span_mask.tolist() == [[1, 1, 0, 0, 0, 0]]


def test_conservation_and_skipping(caplog):
    examples = [ex(n) for n in (1, 2, 3, 40, 4)]
    cfg = ModelConfig(vocab_size=60, hidden_dim=8, encoder_heads=2, max_positions=20)
    seen = sum(len(b) for b in make_batches(examples, 2, model_config=cfg))
    assert seen == 4
    assert "skipping 1" in caplog.text


def test_batch_order_seeded():
    lengths = [3, 9, 1, 4, 4, 7, 2, 8, 5, 6]
    assert bucket_order(lengths, 3, 5) == bucket_order(lengths, 3, 5)
    assert sorted(i for chunk in bucket_order(lengths, 3, 5) for i in chunk) == list(range(10))
    orders = {str(bucket_order(lengths, 3, s)) for s in range(10)}
    assert len(orders) > 1


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)


def test_identity_corpus_learns_tags():
    refs = generate_references(400, 5)
    pairs = [CorpusPair(r, r) for r in refs]
    vocab = build_vocab(refs, 300, 1)
    result = train(pairs, TrainConfig(epochs=1, learning_rate=3e-3, batch_size=16, valid_fraction=0.0),
                   small_config(vocab), vocab)
    batch = next(make_batches(label_pairs(pairs, vocab), len(pairs)))
    with torch.no_grad():
        tag_log_probs, _ = result.model.forward_batch(batch)
    valid = ~batch.pad_mask
    accuracy = ((tag_log_probs.argmax(-1) == batch.tags) & valid).sum() / valid.sum()
    assert accuracy.item() >= 0.99


def test_loss_decreases(corpus):
    pairs, vocab = corpus
    cfg = small_config(vocab)
    examples = label_pairs(pairs, vocab)
    torch.manual_seed(0)
    from constrained_ec.model import ConstrainedCorrector
    before = evaluate_loss(ConstrainedCorrector(cfg), examples)
    result = train(pairs, TrainConfig(epochs=1, learning_rate=1e-3, valid_fraction=0.0), cfg, vocab)
    assert evaluate_loss(result.model, examples) < before


def _checksum(model):
    h = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.numpy().tobytes())
    return h.hexdigest()


@pytest.mark.parametrize("kind", ["lstm", "transformer"])
def test_training_is_deterministic(corpus, kind):
    pairs, vocab = corpus
    cfg = TrainConfig(epochs=2, learning_rate=1e-3, seed=3)
    a = train(pairs, cfg, small_config(vocab, kind, dropout=0.1), vocab)
    b = train(pairs, cfg, small_config(vocab, kind, dropout=0.1), vocab)
    assert _checksum(a.model) == _checksum(b.model)
    assert a.history == b.history


def test_log_and_best_checkpoint(corpus, tmp_path):
    pairs, vocab = corpus
    log = tmp_path / "train.log"
    ckpt = tmp_path / "model.ckpt"
    result = train(pairs, TrainConfig(epochs=2, learning_rate=1e-3, log_path=str(log),
                                      checkpoint_path=str(ckpt)), small_config(vocab), vocab)
    records = [json.loads(line) for line in log.read_text().splitlines()]
    assert [(r["epoch"], r["split"]) for r in records] == [(1, "train"), (1, "valid"), (2, "train"), (2, "valid")]
    assert set(records[0]) == {"epoch", "split", "loss_oper", "loss_dec", "tag_acc", "token_acc"}
    model, header = load_checkpoint(ckpt, vocab.digest())
    assert header["extra"]["epoch"] == result.best_epoch
    valid = [r["loss_oper"] * 3 + r["loss_dec"] for r in records if r["split"] == "valid"]
    assert result.best_epoch == 1 + valid.index(min(valid))


def test_nan_loss_aborts(corpus, monkeypatch):
    pairs, vocab = corpus
    from constrained_ec import model as model_mod

    monkeypatch.setattr(model_mod, "span_nll", lambda *a: torch.tensor(float("nan"), requires_grad=True))
    with pytest.raises(TrainingDiverged):
        train(pairs, TrainConfig(epochs=1), small_config(vocab), vocab)


def test_baseline_trains(corpus):
    pairs, vocab = corpus
    result = train_baseline(pairs, TrainConfig(epochs=1, learning_rate=1e-3), small_config(vocab), vocab)
    assert result.model.kind == "seq2seq"
    assert result.history[0]["token_acc"] is not None


def test_vocab_size_mismatch(corpus):
    pairs, vocab = corpus
    with pytest.raises(ValueError):
        train(pairs, TrainConfig(epochs=1), small_config(vocab, vocab_size=len(vocab) + 1), vocab)


@pytest.mark.parametrize("kind", ["lstm", "transformer"])
def test_checkpoint_round_trip(tmp_path, kind):
    model = tiny_model(kind)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, "abc", {"note": 1})
    loaded, header = load_checkpoint(path, "abc")
    assert header["extra"] == {"note": 1}
    assert header["config"]["decoder_kind"] == kind
    for (n1, t1), (n2, t2) in zip(model.state_dict().items(), loaded.state_dict().items()):
        assert n1 == n2 and torch.equal(t1, t2)
    assert not loaded.training


def test_checkpoint_rejects_other_vocab(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, tiny_model(), "abc")
    with pytest.raises(CheckpointError):
        load_checkpoint(path, "def")


def test_checkpoint_shape_validation(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, tiny_model(), "abc")
    blob = path.read_bytes()
    # claim a different vocabulary size in the header: shapes no longer match
    patched = blob.replace(b'"vocab_size": 17', b'"vocab_size": 18')
    path.write_bytes(patched)
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(path)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(b"hello world")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_stop_when_ends_early(corpus):
    pairs, vocab = corpus
    seen = []

    def stop(epoch, model):
        seen.append((epoch, model.training))
        return epoch == 2

    result = train(pairs, TrainConfig(epochs=5, valid_fraction=0.0), small_config(vocab), vocab, stop_when=stop)
    assert seen == [(1, False), (2, False)]
    assert result.best_epoch == 2
