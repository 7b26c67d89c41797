"""Small frequency-based word vocabulary for the toy text encoder."""

from __future__ import annotations

import re
from collections import Counter

PAD, UNK = "<pad>", "<unk>"
_WORD = re.compile(r"[a-z0-9']+")


def words(text: str) -> list[str]:
    return _WORD.findall(text.lower())


class TextVocab:
    def __init__(self, vocabulary: list[str]):
        if vocabulary[:2] != [PAD, UNK]:
            raise ValueError("vocabulary must start with <pad>, <unk>")
        self.words = list(vocabulary)
        self._ids = {w: i for i, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    @property
    def pad_id(self) -> int:
        return 0

    @classmethod
    def build(cls, texts, max_size: int = 8000) -> "TextVocab":
        counts = Counter()
        for text in texts:
            counts.update(words(text))
        most_common = [w for w, _ in counts.most_common(max_size - 2)]
        return cls([PAD, UNK] + most_common)

    def encode(self, text: str, max_len: int) -> list[int]:
        ids = [self._ids.get(w, 1) for w in words(text)][:max_len]
        return ids + [0] * (max_len - len(ids))

    def serialize(self) -> str:
        return "\n".join(self.words) + "\n"

    @classmethod
    def deserialize(cls, text: str) -> "TextVocab":
        return cls(text.strip("\n").split("\n"))
