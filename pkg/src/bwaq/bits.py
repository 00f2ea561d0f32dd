"""Packed bit vectors on 64-bit words, LSB-first channel order.

Bit i of a block corresponds to channel (B*l + i); within a word the least
significant bit is the lowest channel index. Padding bits beyond valid_bits
are always zero so popcounts never see them. This layout is normative for
the serialized formats.
"""

import sys
from dataclasses import dataclass

import numpy as np

from .errors import DataError

if sys.byteorder != "little":
    raise ImportError("packed bit layout requires a little-endian platform")

WORD_BITS = 64


def words_for(nbits: int) -> int:
    return (nbits + WORD_BITS - 1) // WORD_BITS


def pack_bits(bits) -> np.ndarray:
    """Pack a {0,1} array into uint64 words along the last axis."""
    bits = np.asarray(bits, dtype=np.uint8)
    nbits = bits.shape[-1]
    nwords = words_for(nbits)
    nbytes = nwords * 8
    packed = np.packbits(bits, axis=-1, bitorder="little")
    if packed.shape[-1] < nbytes:
        pad = np.zeros(packed.shape[:-1] + (nbytes - packed.shape[-1],), dtype=np.uint8)
        packed = np.concatenate([packed, pad], axis=-1)
    return np.ascontiguousarray(packed).view(np.uint64)


def unpack_bits(words, nbits: int) -> np.ndarray:
    """Inverse of pack_bits; returns a {0,1} uint8 array of width nbits."""
    words = np.ascontiguousarray(words, dtype=np.uint64)
    as_bytes = words.view(np.uint8)
    bits = np.unpackbits(as_bytes, axis=-1, bitorder="little")
    return bits[..., :nbits]


def popcount(words) -> np.ndarray:
    return np.bitwise_count(np.asarray(words, dtype=np.uint64))


@dataclass
class BitBlock:
    """One group of channel bits: ceil(B/64) words, B valid bits."""

    words: np.ndarray
    valid_bits: int

    @classmethod
    def from_bits(cls, bits) -> "BitBlock":
        bits = np.asarray(bits, dtype=np.uint8).ravel()
        return cls(words=pack_bits(bits), valid_bits=bits.size)

    def to_bits(self) -> np.ndarray:
        return unpack_bits(self.words, self.valid_bits)

    def popcount(self) -> int:
        return int(popcount(self.words).sum())

    def _check_compatible(self, other: "BitBlock") -> None:
        if self.valid_bits != other.valid_bits:
            raise DataError(
                f"bit length mismatch: {self.valid_bits} vs {other.valid_bits}"
            )

    def __and__(self, other: "BitBlock") -> "BitBlock":
        self._check_compatible(other)
        return BitBlock(self.words & other.words, self.valid_bits)

    def __xor__(self, other: "BitBlock") -> "BitBlock":
        self._check_compatible(other)
        return BitBlock(self.words ^ other.words, self.valid_bits)

    def __invert__(self) -> "BitBlock":
        # padding must stay zero after complement
        inv = ~self.words
        return BitBlock(_mask_padding(inv, self.valid_bits), self.valid_bits)


def _mask_padding(words: np.ndarray, valid_bits: int) -> np.ndarray:
    words = words.copy()
    tail = valid_bits % WORD_BITS
    if tail:
        keep = np.uint64((1 << tail) - 1)
        words[..., -1] &= keep
    return words
