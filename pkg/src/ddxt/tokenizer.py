"""Vocabularies and fixed-length id encoding."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CorpusError, ParameterError

PAD, BOS, EOS, SEP, UNK = "<pad>", "<bos>", "<eos>", "<sep>", "<unk>"
SPECIALS = (PAD, BOS, EOS, SEP, UNK)
PAD_ID, BOS_ID, EOS_ID, SEP_ID, UNK_ID = range(5)
N_SPECIALS = len(SPECIALS)


class Vocabulary:
    """Bidirectional token/id map; the five specials always hold ids 0-4."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:N_SPECIALS]) != SPECIALS:
            raise CorpusError(f"vocabulary must start with {SPECIALS}")
        self.id_to_token: list[str] = tokens
        self.token_to_id: dict[str, int] = {}
        for i, tok in enumerate(tokens):
            if tok in self.token_to_id:
                raise CorpusError(f"duplicate vocabulary token {tok!r}")
            self.token_to_id[tok] = i

    specials = SPECIALS

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def __repr__(self) -> str:
        return f"Vocabulary(size={len(self)})"

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        if not 0 <= idx < len(self):
            raise IndexError(f"token id {idx} outside vocabulary of size {len(self)}")
        return self.id_to_token[idx]

    @property
    def content_tokens(self) -> list[str]:
        return self.id_to_token[N_SPECIALS:]

    def to_text(self) -> str:
        return "".join(tok + "\n" for tok in self.id_to_token)

    @classmethod
    def from_text(cls, text: str) -> Vocabulary:
        return cls(text.split("\n")[:-1] if text.endswith("\n") else text.split("\n"))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> Vocabulary:
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def build_vocab(token_stream: Iterable[str]) -> Vocabulary:
    """Specials first, then unique tokens in first-seen order."""
    tokens = list(SPECIALS)
    seen = set(SPECIALS)
    for tok in token_stream:
        if tok in seen:
            if tok in SPECIALS:
                raise CorpusError(f"corpus token {tok!r} collides with a special token")
            continue
        if not tok or "\n" in tok:
            raise CorpusError(f"invalid token {tok!r}")
        seen.add(tok)
        tokens.append(tok)
    return Vocabulary(tokens)


@dataclass(frozen=True)
class EncodedSequence:
    ids: np.ndarray
    true_length: int

    def __len__(self) -> int:
        return len(self.ids)


def encode(tokens: Sequence[str], vocab: Vocabulary, max_len: int) -> EncodedSequence:
    """Map tokens to ids, truncating the tail or right-padding to ``max_len``."""
    if max_len < 2:
        raise ParameterError(f"max_len must be >= 2, got {max_len}")
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    n = min(len(tokens), max_len)
    for i in range(n):
        ids[i] = vocab.id(tokens[i])
    return EncodedSequence(ids, n)


def decode(ids: Iterable[int], vocab: Vocabulary, strip_specials: bool = True) -> list[str]:
    out = []
    for idx in ids:
        idx = int(idx)
        tok = vocab.token(idx)
        if strip_specials:
            if idx == EOS_ID:
                break
            if idx < N_SPECIALS:
                continue
        out.append(tok)
    return out
