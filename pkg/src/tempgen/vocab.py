"""Whole-token vocabulary with reserved control tokens.

Ids 0..3 are PAD/BOS/EOS/UNK, ids 4..9 the six template tags, then
content tokens. The corpora here are closed-vocabulary synthetic text, so
no subword segmentation is used; copy behaviour is verified at
whole-token granularity.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .codec import SPECIAL_TAGS
from .corpus import Dataset

PAD_TOKEN = "<PAD>"
BOS_TOKEN = "<BOS>"
EOS_TOKEN = "<EOS>"
UNK_TOKEN = "<UNK>"

RESERVED_TOKENS = (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN, *SPECIAL_TAGS)

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3


class VocabError(ValueError):
    pass


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    token_to_id: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.tokens[:len(RESERVED_TOKENS)] != RESERVED_TOKENS:
            raise VocabError("vocabulary must start with the reserved tokens")
        mapping = {tok: i for i, tok in enumerate(self.tokens)}
        if len(mapping) != len(self.tokens):
            raise VocabError("vocabulary contains duplicate tokens")
        object.__setattr__(self, "token_to_id", mapping)

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        """Map tokens to ids; out-of-vocabulary tokens become UNK. The
        PAD/BOS/EOS control tokens are never produced here; batching and
        decoding layers add them."""
        ids = []
        for tok in tokens:
            i = self.token_to_id.get(tok, UNK_ID)
            ids.append(UNK_ID if i in (PAD_ID, BOS_ID, EOS_ID) else i)
        return ids

    def decode(self, ids: Sequence[int]) -> list[str]:
        out = []
        for i in ids:
            if not 0 <= i < len(self.tokens):
                raise VocabError(f"id {i} out of range for vocabulary of size "
                                 f"{len(self.tokens)}")
            out.append(self.tokens[i])
        return out

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            tokens = tuple(line.rstrip("\n") for line in fh)
        if len(tokens) < len(RESERVED_TOKENS):
            raise VocabError(f"vocabulary file {path} is too small")
        return cls(tokens=tokens)


def build_vocab(dataset: Dataset, min_freq: int = 1,
                extra_tokens: Iterable[str] = ()) -> Vocab:
    """Build a vocabulary from document tokens.

    Content tokens with frequency >= min_freq are ordered by descending
    frequency then lexicographically. Slot names and entity type labels
    from the annotations, plus any extra_tokens (for example numeric slot
    aliases or a merged-value separator), are always included after the
    content block, so every encodable target stays in vocabulary.
    """
    counter: Counter[str] = Counter()
    for example in dataset:
        counter.update(example.document.tokens)
    content = sorted((tok for tok, c in counter.items() if c >= min_freq),
                     key=lambda tok: (-counter[tok], tok))

    schema: set[str] = set()
    for example in dataset:
        for template in example.templates:
            for sf in template.slots:
                schema.update(sf.slot_name.split())
                for entity in sf.entities:
                    schema.update(entity.entity_type.split())

    tokens = list(RESERVED_TOKENS) + content
    seen = set(tokens)
    for tok in sorted(schema):
        if tok not in seen:
            tokens.append(tok)
            seen.add(tok)
    for tok in extra_tokens:
        if tok not in seen:
            tokens.append(tok)
            seen.add(tok)
    return Vocab(tokens=tuple(tokens))
