"""Prompt vocabulary and the bag-of-tokens text encoder.

Prompts are unordered attribute sets over a fixed vocabulary (lesion class,
size, multiplicity, hair, skin tone).  A prompt encodes to the mean of its
tokens' embedding rows; the reserved null token (id 0) is the unconditional
embedding used for conditioning dropout and classifier-free guidance.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T

EMBED_DIM = 64

_TOKENS = (
    "<null>",
    "benign",
    "malignant",
    "tiny",
    "small",
    "medium",
    "large",
    "single",
    "multiple",
    "hairy",
    "clean",
    "light-skin",
    "dark-skin",
)


class UnknownTokenError(ValueError):
    """Prompt contains a word outside the vocabulary."""

    def __init__(self, word: str):
        self.word = word
        super().__init__(f"unknown prompt word: {word!r}")


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...] = _TOKENS

    @property
    def null_id(self) -> int:
        return 0

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, word: str) -> int:
        try:
            return self.tokens.index(word)
        except ValueError:
            raise UnknownTokenError(word) from None


DEFAULT_VOCAB = Vocabulary()


def tokenize(prompt: str, vocab: Vocabulary = DEFAULT_VOCAB) -> list[int]:
    """Whitespace-split prompt to token ids; duplicates collapsed, order kept."""
    ids: list[int] = []
    for word in prompt.split():
        tid = vocab.id_of(word)
        if tid not in ids:
            ids.append(tid)
    return ids


def init_embedding_table(
    rng: np.random.Generator, vocab: Vocabulary = DEFAULT_VOCAB, dim: int = EMBED_DIM
) -> T.Tensor:
    """Trainable token table, unit-normal entries scaled 0.02."""
    table = 0.02 * rng.standard_normal((len(vocab), dim))
    return T.Tensor(table.astype(np.float32), requires_grad=True)


def encode(table: T.Tensor, id_lists: list[list[int]]) -> T.Tensor:
    """Encode a batch of token-id lists to conditioning vectors [N, dim].

    The mean over embedding rows, so encoding is order-invariant; an empty
    list encodes to the null row exactly.
    """
    return T.embedding_mean(table, id_lists)


def encode_prompts(table: T.Tensor, prompts: list[str], vocab: Vocabulary = DEFAULT_VOCAB) -> T.Tensor:
    return encode(table, [tokenize(p, vocab) for p in prompts])


def null_vector(table: T.Tensor) -> np.ndarray:
    """The unconditional embedding (null-token row) as a plain array."""
    return table.data[0].copy()
