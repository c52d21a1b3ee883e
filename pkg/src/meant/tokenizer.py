"""Toy whitespace/punctuation tokenizer standing in for a pretrained one.

Any object honoring TokenizerSpec's fields can be swapped in; the dataset
builder only relies on ``tokenize`` semantics: fixed-length id sequences
with PAD as a contiguous suffix.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass

from .errors import ContractError

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
SEP_TOKEN = "[SEP]"

_TOKEN_RE = re.compile(r"\[sep\]|[a-z0-9']+")


@dataclass(frozen=True)
class TokenizerSpec:
    vocab: dict[str, int]
    pad_id: int = 0
    unk_id: int = 1
    sep_id: int = 2
    max_len: int = 128

    def __post_init__(self):
        reserved = {self.pad_id, self.unk_id, self.sep_id}
        if len(reserved) != 3:
            raise ContractError("PAD/UNK/SEP ids must be distinct")
        if self.max_len < 1:
            raise ContractError("max_len must be >= 1")
        if any(i >= self.vocab_size or i < 0 for i in self.vocab.values()):
            raise ContractError("vocabulary id out of range")

    @property
    def vocab_size(self) -> int:
        ids = set(self.vocab.values()) | {self.pad_id, self.unk_id, self.sep_id}
        return max(ids) + 1

    def to_dict(self) -> dict:
        return {"vocab": self.vocab, "pad_id": self.pad_id,
                "unk_id": self.unk_id, "sep_id": self.sep_id,
                "max_len": self.max_len}

    @classmethod
    def from_dict(cls, d: dict) -> "TokenizerSpec":
        return cls(vocab=dict(d["vocab"]), pad_id=d["pad_id"],
                   unk_id=d["unk_id"], sep_id=d["sep_id"],
                   max_len=d["max_len"])


def split_tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def build_vocab(texts, max_size: int = 4096, max_len: int = 128) -> TokenizerSpec:
    """Frequency-ordered vocabulary; ties broken alphabetically."""
    counts: Counter[str] = Counter()
    for text in texts:
        for tok in split_tokens(text):
            if tok != "[sep]":
                counts[tok] += 1
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    vocab = {}
    next_id = 3
    for tok, _ in ordered[:max(0, max_size - 3)]:
        vocab[tok] = next_id
        next_id += 1
    return TokenizerSpec(vocab=vocab, max_len=max_len)


def tokenize(text: str, spec: TokenizerSpec) -> list[int]:
    """Fixed-length ids: head-truncated, right-padded with PAD."""
    ids = []
    for tok in split_tokens(text):
        if tok == "[sep]":
            ids.append(spec.sep_id)
        else:
            ids.append(spec.vocab.get(tok, spec.unk_id))
        if len(ids) == spec.max_len:
            break
    ids.extend([spec.pad_id] * (spec.max_len - len(ids)))
    return ids
