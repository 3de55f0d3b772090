"""MAP binarization, packed hash codes and exhaustive Hamming search.

Bit ``j`` of an ``n_bits``-bit code lives in word ``j // 64`` at bit position
``j % 64`` (LSB first); padding bits above ``n_bits`` are always zero.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np


def n_words(n_bits: int) -> int:
    return (n_bits + 63) // 64


def pack_bits(bits) -> np.ndarray:
    """Pack a ``(..., n)`` 0/1 array into ``(..., ceil(n/64))`` uint64 words."""
    bits = np.asarray(bits).astype(np.uint64)
    n_bits = bits.shape[-1]
    w = n_words(n_bits)
    padded = np.zeros(bits.shape[:-1] + (w * 64,), dtype=np.uint64)
    padded[..., :n_bits] = bits
    shifts = np.arange(64, dtype=np.uint64)
    chunks = padded.reshape(bits.shape[:-1] + (w, 64))
    return np.bitwise_or.reduce(chunks << shifts, axis=-1)


def unpack_bits(words, n_bits: int) -> np.ndarray:
    words = np.asarray(words, dtype=np.uint64)
    shifts = np.arange(64, dtype=np.uint64)
    bits = (words[..., :, None] >> shifts) & np.uint64(1)
    return bits.reshape(words.shape[:-1] + (-1,))[..., :n_bits].astype(np.uint8)


@dataclass(frozen=True)
class HashCode:
    n_bits: int
    words: np.ndarray

    def __post_init__(self):
        words = np.asarray(self.words, dtype=np.uint64).reshape(-1)
        if words.size != n_words(self.n_bits):
            raise ValueError(f"{self.n_bits}-bit code needs {n_words(self.n_bits)} words, got {words.size}")
        if self.n_bits % 64 and words[-1] >> np.uint64(self.n_bits % 64):
            raise ValueError("padding bits above n_bits must be zero")
        object.__setattr__(self, "words", words)

    @classmethod
    def from_bits(cls, bits) -> "HashCode":
        bits = np.asarray(bits).reshape(-1)
        return cls(bits.size, pack_bits(bits))

    def bits(self) -> np.ndarray:
        return unpack_bits(self.words, self.n_bits)

    def __eq__(self, other):
        return isinstance(other, HashCode) and self.n_bits == other.n_bits and np.array_equal(self.words, other.words)

    def __hash__(self):
        return hash((self.n_bits, self.words.tobytes()))


def binarize_bits(probs) -> np.ndarray:
    """Thresholded bits: 1 where ``probs >= 0.5`` (ties go to 1)."""
    return (np.asarray(probs, dtype=np.float64) >= 0.5).astype(np.uint8)


def binarize(probs) -> HashCode:
    return HashCode.from_bits(binarize_bits(probs))


def binarize_batch(probs) -> np.ndarray:
    """Packed words ``(B, ceil(n/64))`` for a ``(B, n)`` posterior array."""
    return pack_bits(binarize_bits(probs))


def hamming(a: HashCode, b: HashCode) -> int:
    if a.n_bits != b.n_bits:
        raise ValueError(f"code length mismatch: {a.n_bits} vs {b.n_bits}")
    return int(np.bitwise_count(a.words ^ b.words).sum())


def hamming_many(words: np.ndarray, query_words: np.ndarray) -> np.ndarray:
    """Distances from one packed query to every row of a packed gallery."""
    return np.bitwise_count(words ^ query_words[None, :]).sum(axis=1, dtype=np.int64)


def map_distance(probs, other_probs) -> int:
    """MAP estimate of the ideal hash distance between two posterior vectors."""
    probs = np.asarray(probs, dtype=np.float64)
    other_probs = np.asarray(other_probs, dtype=np.float64)
    if probs.shape != other_probs.shape:
        raise ValueError(f"length mismatch: {probs.shape} vs {other_probs.shape}")
    return hamming(binarize(probs), binarize(other_probs))


@dataclass(frozen=True)
class Neighbor:
    id: int
    distance: int
    label: int


class CodeBook:
    """Immutable gallery of (id, label, code) entries sharing one code length."""

    def __init__(self, n_bits: int, ids, labels, words):
        ids = np.asarray(ids, dtype=np.uint64).reshape(-1)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        words = np.asarray(words, dtype=np.uint64).reshape(len(ids), n_words(n_bits))
        if len(labels) != len(ids):
            raise ValueError("ids and labels differ in length")
        if len(np.unique(ids)) != len(ids):
            raise ValueError("ids must be unique")
        if n_bits % 64 and np.any(words[:, -1] >> np.uint64(n_bits % 64)):
            raise ValueError("padding bits above n_bits must be zero")
        self.n_bits = int(n_bits)
        # canonical id order; search ties resolve by ascending id via a stable sort
        order = np.argsort(ids, kind="stable")
        self.ids, self.labels, self.words = ids[order], labels[order], words[order]
        for arr in (self.ids, self.labels, self.words):
            arr.setflags(write=False)

    @classmethod
    def from_codes(cls, entries) -> "CodeBook":
        """Build from ``(id, label, HashCode)`` triples."""
        entries = list(entries)
        if not entries:
            raise ValueError("empty code book")
        n_bits = entries[0][2].n_bits
        if any(c.n_bits != n_bits for _, _, c in entries):
            raise ValueError("all codes must share one length")
        return cls(n_bits, [e[0] for e in entries], [e[1] for e in entries],
                   np.stack([e[2].words for e in entries]))

    def __len__(self) -> int:
        return len(self.ids)

    def code(self, i: int) -> HashCode:
        return HashCode(self.n_bits, self.words[i])

    def ranking(self, query: HashCode) -> tuple[np.ndarray, np.ndarray]:
        """Row order over the whole gallery by (distance, id), plus the distances."""
        if len(self) == 0:
            raise ValueError("empty code book")
        if query.n_bits != self.n_bits:
            raise ValueError(f"code length mismatch: query has {query.n_bits} bits, book has {self.n_bits}")
        dist = hamming_many(self.words, query.words)
        return np.argsort(dist, kind="stable"), dist


def search_topk(book: CodeBook, query: HashCode, k: int) -> list[Neighbor]:
    if k < 1:
        raise ValueError("k must be >= 1")
    order, dist = book.ranking(query)
    return [Neighbor(int(book.ids[i]), int(dist[i]), int(book.labels[i])) for i in order[:k]]


# --- code file -----------------------------------------------------------------

CODES_MAGIC = b"PDHC"
CODES_VERSION = 1


def _record_dtype(n_bits: int) -> np.dtype:
    # packed: id u64, label u16, words u64 x ceil(n_bits/64)
    return np.dtype([("id", "<u8"), ("label", "<u2"), ("words", "<u8", (n_words(n_bits),))])


def save_codes(path, book: CodeBook) -> None:
    if np.any(book.labels < 0) or np.any(book.labels > 0xFFFF):
        raise ValueError("labels must fit in u16")
    rec = np.zeros(len(book), dtype=_record_dtype(book.n_bits))
    rec["id"], rec["label"], rec["words"] = book.ids, book.labels, book.words
    with open(path, "wb") as f:
        f.write(CODES_MAGIC + struct.pack("<IIQ", CODES_VERSION, book.n_bits, len(book)))
        f.write(rec.tobytes())


def load_codes(path) -> CodeBook:
    with open(path, "rb") as f:
        head = f.read(20)
        if len(head) != 20 or head[:4] != CODES_MAGIC:
            raise ValueError(f"{path}: not a PDHC code file")
        version, n_bits, count = struct.unpack("<IIQ", head[4:])
        if version != CODES_VERSION:
            raise ValueError(f"{path}: unsupported code file version {version}")
        dt = _record_dtype(n_bits)
        body = f.read()
    if len(body) != dt.itemsize * count:
        raise ValueError(f"{path}: expected {count} entries, file size disagrees")
    rec = np.frombuffer(body, dtype=dt)
    return CodeBook(n_bits, rec["id"], rec["label"].astype(np.int64), rec["words"].reshape(count, n_words(n_bits)))
