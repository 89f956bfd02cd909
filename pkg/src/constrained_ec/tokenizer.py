"""Small WordPiece-style vocabulary and greedy longest-match tokenizer."""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Sequence

PAD, UNK, BOS, EOS, DUMMY = "[PAD]", "[UNK]", "<bos>", "<eos>", "[DUMMY]"
RESERVED = (PAD, UNK, BOS, EOS, DUMMY)
PAD_ID, UNK_ID, BOS_ID, EOS_ID, DUMMY_ID = range(5)
CONTINUATION = "##"

# never surface in detokenized text
_SILENT_IDS = frozenset({PAD_ID, BOS_ID, EOS_ID, DUMMY_ID})


class ConfigurationError(ValueError):
    pass


class Vocabulary:
    """Immutable token <-> id mapping with the five reserved tokens at ids 0-4."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:5]) != RESERVED:
            raise ConfigurationError(f"reserved tokens must occupy ids 0-4 as {RESERVED}")
        index = {}
        for i, tok in enumerate(tokens):
            if not tok or tok == CONTINUATION:
                raise ConfigurationError(f"invalid token {tok!r} at id {i}")
            if tok in index:
                raise ConfigurationError(f"duplicate token {tok!r} at id {i}")
            index[tok] = i
        self._tokens = tuple(tokens)
        self._index = index

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    def __hash__(self) -> int:
        return hash(self._tokens)

    def __repr__(self) -> str:
        return f"Vocabulary(size={len(self)})"

    @property
    def tokens(self) -> tuple:
        return self._tokens

    def id(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def digest(self) -> str:
        """Stable hash of the token list, stored in checkpoints."""
        return hashlib.sha256("\n".join(self._tokens).encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self._tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([line for line in lines if line])


@dataclass
class TokenSequence:
    ids: List[int] = field(default_factory=list)
    surfaces: List[str] = field(default_factory=list)
    is_dummy: List[bool] = field(default_factory=list)

    def __post_init__(self):
        if not len(self.ids) == len(self.surfaces) == len(self.is_dummy):
            raise ValueError("ids, surfaces and is_dummy must have equal length")

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_ids(cls, ids: Iterable[int], vocab: Vocabulary | None = None) -> "TokenSequence":
        ids = list(ids)
        surfaces = [vocab.token(i) if vocab is not None else str(i) for i in ids]
        return cls(ids, surfaces, [i == DUMMY_ID for i in ids])


def _word_pieces(word: str):
    """Yield every candidate piece of ``word`` of length >= 2."""
    n = len(word)
    for start in range(n):
        for end in range(start + 2, n + 1):
            piece = word[start:end]
            yield piece if start == 0 else CONTINUATION + piece


def build_vocab(corpus: Iterable[str], max_size: int = 2000, min_freq: int = 1) -> Vocabulary:
    """Build a vocabulary from lines of text.

    Every character seen is included both word-initially and as a
    continuation piece, so tokenization of seen characters never falls back
    to UNK. Remaining room up to ``max_size`` is filled with the most
    frequent multi-character pieces (ties broken lexicographically). The
    character inventory is never truncated, so a tiny ``max_size`` can be
    exceeded by it.
    """
    if max_size <= len(RESERVED):
        raise ConfigurationError("max_size must leave room beyond the reserved tokens")
    words = Counter()
    n_lines = 0
    for line in corpus:
        n_lines += 1
        words.update(line.lower().split())
    if n_lines == 0 or not words:
        raise ConfigurationError("cannot build a vocabulary from an empty corpus")

    chars = sorted({c for w in words for c in w})
    base = list(RESERVED)
    base += chars
    base += [CONTINUATION + c for c in chars]

    pieces = Counter()
    for word, freq in words.items():
        for piece in set(_word_pieces(word)):
            pieces[piece] += freq
    ranked = sorted(
        (p for p, f in pieces.items() if f >= min_freq and p not in RESERVED),
        key=lambda p: (-pieces[p], p),
    )
    room = max(0, max_size - len(base))
    return Vocabulary(base + ranked[:room])


def _segment(word: str, vocab: Vocabulary):
    start = 0
    while start < len(word):
        prefix = "" if start == 0 else CONTINUATION
        end = len(word)
        while end > start and (prefix + word[start:end]) not in vocab:
            end -= 1
        if end == start:
            yield UNK_ID, UNK
            start += 1
        else:
            piece = prefix + word[start:end]
            yield vocab.id(piece), piece
            start = end


def tokenize(text: str, vocab: Vocabulary) -> TokenSequence:
    ids, surfaces = [], []
    for word in text.lower().split():
        for idx, piece in _segment(word, vocab):
            ids.append(idx)
            surfaces.append(piece)
    return TokenSequence(ids, surfaces, [False] * len(ids))


def detokenize_ids(ids: Iterable[int], vocab: Vocabulary) -> str:
    words: List[str] = []
    for idx in ids:
        if idx in _SILENT_IDS:
            continue
        tok = vocab.token(idx)
        if tok.startswith(CONTINUATION):
            if words:
                words[-1] += tok[len(CONTINUATION):]
            else:
                words.append(tok[len(CONTINUATION):])
        else:
            words.append(tok)
    return " ".join(words)


def detokenize(tokens: TokenSequence, vocab: Vocabulary) -> str:
    return detokenize_ids(
        (i for i, dummy in zip(tokens.ids, tokens.is_dummy) if not dummy), vocab
    )


def normalize(text: str) -> str:
    return " ".join(text.lower().split())
