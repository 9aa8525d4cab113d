"""Word-level tokenizer, vocabulary table, and sentence splitting.

Encoding lowercases and splits on whitespace and punctuation boundaries;
every punctuation mark is its own token. Ids are dense, with the first
four reserved: PAD=0, BOS=1, EOS=2, UNK=3. Out-of-vocabulary tokens map
to UNK. decode(encode(t)) reproduces the normalized text for in-vocab
input.
"""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from typing import Iterable, Sequence

from .errors import InvalidArgumentError

RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")
_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split into word and punctuation tokens."""
    return _TOKEN_RE.findall(text.lower())


def normalize(text: str) -> str:
    """Canonical surface form: lowercased tokens joined by single spaces."""
    return " ".join(tokenize(text))


def split_sentences(text: str) -> list[str]:
    """Split after '.', '!' or '?' followed by whitespace or end of text."""
    stripped = text.strip()
    if not stripped:
        return []
    return [part for part in _SENTENCE_RE.split(stripped) if part]


class Vocabulary:
    """Immutable token table; position in the full list is the id."""

    def __init__(self, extra_tokens: Iterable[str]):
        tokens = list(RESERVED) + list(extra_tokens)
        seen = set()
        for tok in tokens:
            if not tok or any(ch.isspace() for ch in tok):
                raise InvalidArgumentError(f"bad vocabulary token {tok!r}")
            if tok in seen:
                raise InvalidArgumentError(f"duplicate vocabulary token {tok!r}")
            seen.add(tok)
        self._tokens = tokens
        self._ids = {tok: i for i, tok in enumerate(tokens)}

    @property
    def size(self) -> int:
        return len(self._tokens)

    @property
    def tokens(self) -> tuple[str, ...]:
        """Full token list including the four reserved entries."""
        return tuple(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def token_id(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._tokens):
            raise IndexError(f"token id {token_id} out of range")
        return self._tokens[token_id]

    def serialize(self) -> bytes:
        return ("\n".join(self._tokens) + "\n").encode("utf-8")

    def sha256(self) -> str:
        return hashlib.sha256(self.serialize()).hexdigest()

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.serialize())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if tuple(lines[:4]) != RESERVED:
            raise InvalidArgumentError(
                "vocabulary file must start with the four reserved tokens")
        return cls(lines[4:])


def build_vocab(texts: Sequence[str], min_freq: int = 1,
                max_size: int | None = None) -> Vocabulary:
    """Frequency vocabulary over tokenized texts, most frequent first.

    Ties order lexicographically. max_size caps the number of retained
    non-reserved tokens; the four reserved entries are always present.
    """
    if not texts:
        raise InvalidArgumentError("build_vocab needs a non-empty corpus")
    if min_freq < 1:
        raise InvalidArgumentError("min_freq must be at least 1")
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(tokenize(text))
    kept = sorted((tok for tok, c in counts.items() if c >= min_freq),
                  key=lambda tok: (-counts[tok], tok))
    if max_size is not None:
        kept = kept[:max_size]
    return Vocabulary(kept)


def encode(text: str, vocab: Vocabulary) -> list[int]:
    """BOS + token ids + EOS; unknown tokens become UNK."""
    return [BOS_ID] + [vocab.token_id(t) for t in tokenize(text)] + [EOS_ID]


def decode(ids: Iterable[int], vocab: Vocabulary) -> str:
    """Ids back to text, dropping reserved ids. Unknown ids raise IndexError."""
    tokens = []
    for i in ids:
        token = vocab.token(int(i))
        if i > UNK_ID:
            tokens.append(token)
    return " ".join(tokens)
