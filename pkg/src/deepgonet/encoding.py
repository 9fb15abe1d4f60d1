"""Amino-acid and label encodings.

Sequences become fixed-length index arrays plus a padding mask; the pad
index sits one past the alphabet so the embedding table has 27 rows.
"""

from __future__ import annotations

import hashlib
from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np

from .errors import EncodingError

# 20 standard residues, then the six IUPAC extras in alphabetical order.
DEFAULT_SYMBOLS = "ACDEFGHIKLMNPQRSTVWYBJOUXZ"
DEFAULT_MAX_LEN = 1000


@dataclass(frozen=True)
class Alphabet:
    symbols: tuple[str, ...] = tuple(DEFAULT_SYMBOLS)
    index_of: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        symbols = tuple(self.symbols)
        if len(symbols) != 26:
            raise EncodingError(f"alphabet must have 26 symbols, got {len(symbols)}")
        if any(len(s) != 1 for s in symbols):
            raise EncodingError("alphabet symbols must be single characters")
        if len(set(symbols)) != 26:
            raise EncodingError("alphabet symbols must be distinct")
        object.__setattr__(self, "symbols", symbols)
        object.__setattr__(self, "index_of", {s: i for i, s in enumerate(symbols)})

    @classmethod
    def from_string(cls, symbols: str) -> Alphabet:
        return cls(tuple(symbols))

    @property
    def pad_index(self) -> int:
        return len(self.symbols)

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def hash(self) -> str:
        """Short stable digest of the symbol order; stored in checkpoints."""
        return hashlib.sha256("".join(self.symbols).encode("ascii")).hexdigest()[:16]

    def is_valid(self, seq: str) -> bool:
        return bool(seq) and all(c in self.index_of for c in seq)


DEFAULT_ALPHABET = Alphabet()


@dataclass(frozen=True)
class EncodedSequence:
    indices: np.ndarray  # int, shape (max_len,)
    mask: np.ndarray  # uint8, shape (max_len,)
    true_length: int


def encode_sequence(seq: str, alphabet: Alphabet = DEFAULT_ALPHABET,
                    max_len: int = DEFAULT_MAX_LEN) -> EncodedSequence:
    """Map residues to indices, truncating to the N-terminal ``max_len`` and right-padding."""
    if max_len < 1:
        raise EncodingError(f"max_len must be >= 1, got {max_len}")
    if not seq:
        raise EncodingError("empty sequence")
    for pos, ch in enumerate(seq):
        if ch not in alphabet.index_of:
            raise EncodingError(f"illegal residue {ch!r} at position {pos}")
    indices = np.full(max_len, alphabet.pad_index, dtype=np.int64)
    mask = np.zeros(max_len, dtype=np.uint8)
    n = min(len(seq), max_len)
    indices[:n] = [alphabet.index_of[c] for c in seq[:n]]
    mask[:n] = 1
    return EncodedSequence(indices, mask, len(seq))


def decode_sequence(enc: EncodedSequence, alphabet: Alphabet = DEFAULT_ALPHABET) -> str:
    return "".join(alphabet.symbols[i] for i, m in zip(enc.indices, enc.mask) if m)


def encode_batch(seqs: Iterable[str], alphabet: Alphabet = DEFAULT_ALPHABET,
                 max_len: int = DEFAULT_MAX_LEN) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack encodings into (indices B x L, mask B x L, true lengths B)."""
    encoded = [encode_sequence(s, alphabet, max_len) for s in seqs]
    if not encoded:
        return (np.zeros((0, max_len), np.int64), np.zeros((0, max_len), np.uint8),
                np.zeros(0, np.int64))
    return (np.stack([e.indices for e in encoded]),
            np.stack([e.mask for e in encoded]),
            np.array([e.true_length for e in encoded], dtype=np.int64))


def one_hot(enc: EncodedSequence, alphabet: Alphabet = DEFAULT_ALPHABET) -> np.ndarray:
    out = np.zeros((len(enc.indices), alphabet.size), dtype=np.float32)
    rows = np.flatnonzero(enc.mask)
    out[rows, enc.indices[rows]] = 1.0
    return out


def encode_labels(indices: Iterable[int], size: int) -> np.ndarray:
    vec = np.zeros(size, dtype=np.uint8)
    for i in indices:
        if not 0 <= i < size:
            raise EncodingError(f"label index {i} out of range for size {size}")
        vec[i] = 1
    return vec


def decode_labels(vec: np.ndarray) -> set[int]:
    return {int(i) for i in np.flatnonzero(vec)}
