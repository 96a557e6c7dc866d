"""Per-token contextual vectors behind a provider boundary.

The classifier consumes frozen per-token vectors: one row per corpus token
inside a pair's context window. Where the vectors come from is a provider
concern (an external encoder dump, or the deterministic hash provider used
for tests); this module only pools spans, builds pair features, and
round-trips the binary table format.

Binary table format (little-endian), extension-agnostic:

    magic   8 bytes  "NGEMB1\\0\\0"
    dim     u32
    count   u32
    then per record:
        id_len        u16
        pair_id       id_len bytes, UTF-8
        window_start  u32
        window_len    u32
        vectors       window_len * dim float32, row-major

The writer emits records sorted by pair_id; a file in that order is
canonical and load/write round-trips it byte-identically.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import CandidatePair, Document, context_window
from .util import atomic_write_bytes

MAGIC = b"NGEMB1\x00\x00"


class EmbeddingError(ValueError):
    pass


class EmbeddingFormatError(EmbeddingError):
    """Malformed binary embedding file."""


class SpanOutOfWindowError(EmbeddingError):
    """A mention span does not lie inside the stored context window."""

    def __init__(self, pair_id: str, span: tuple[int, int], window: tuple[int, int]):
        self.pair_id = pair_id
        super().__init__(
            f"pair {pair_id!r}: span [{span[0]}, {span[1]}] outside stored "
            f"window [{window[0]}, {window[1]}]"
        )


@dataclass(frozen=True)
class WindowEmbedding:
    """Vectors for one pair's context window; row i is token window_start+i."""

    pair_id: str
    window_start: int
    vectors: np.ndarray  # (window_len, dim) float32

    @property
    def window_end(self) -> int:
        return self.window_start + len(self.vectors) - 1

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


class EmbeddingTable:
    """Immutable map pair_id -> WindowEmbedding with a single shared dim."""

    def __init__(self, dim: int, entries: Iterable[WindowEmbedding] = ()):
        if dim <= 0:
            raise EmbeddingError(f"dim must be positive, got {dim}")
        self.dim = dim
        self._entries: dict[str, WindowEmbedding] = {}
        for entry in entries:
            self.add(entry)

    def add(self, entry: WindowEmbedding) -> None:
        if entry.vectors.ndim != 2 or entry.vectors.shape[1] != self.dim:
            raise EmbeddingError(
                f"pair {entry.pair_id!r}: vectors shape {entry.vectors.shape} "
                f"does not match table dim {self.dim}"
            )
        if len(entry.vectors) == 0:
            raise EmbeddingError(f"pair {entry.pair_id!r}: empty window")
        if entry.pair_id in self._entries:
            raise EmbeddingError(f"duplicate pair_id {entry.pair_id!r}")
        self._entries[entry.pair_id] = entry

    def __getitem__(self, pair_id: str) -> WindowEmbedding:
        try:
            return self._entries[pair_id]
        except KeyError:
            raise KeyError(f"no embedding for pair_id {pair_id!r}") from None

    def __contains__(self, pair_id: str) -> bool:
        return pair_id in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def pair_ids(self) -> list[str]:
        return list(self._entries)


def mean_pool(entry: WindowEmbedding, span: tuple[int, int]) -> np.ndarray:
    """Mean of the token vectors over an inclusive document-coordinate span.

    Accumulates in float64. Raises SpanOutOfWindowError (naming the pair)
    when the span is not fully inside the stored window.
    """
    start, end = span
    if start > end:
        raise EmbeddingError(f"pair {entry.pair_id!r}: empty span [{start}, {end}]")
    if start < entry.window_start or end > entry.window_end:
        raise SpanOutOfWindowError(
            entry.pair_id, (start, end), (entry.window_start, entry.window_end)
        )
    lo = start - entry.window_start
    hi = end - entry.window_start + 1
    return entry.vectors[lo:hi].astype(np.float64).mean(axis=0)


def pair_feature(c: np.ndarray, l: np.ndarray) -> np.ndarray:
    """Concatenate the character and place span vectors, in that order."""
    c = np.asarray(c, dtype=np.float64)
    l = np.asarray(l, dtype=np.float64)
    if c.ndim != 1 or l.ndim != 1 or c.shape != l.shape:
        raise EmbeddingError(
            f"span vector dimensions differ: {c.shape} vs {l.shape}"
        )
    return np.concatenate([c, l])


def build_pair_feature(pair: CandidatePair, table: EmbeddingTable) -> np.ndarray:
    entry = table[pair.pair_id]
    c = mean_pool(entry, (pair.character.start, pair.character.end))
    l = mean_pool(entry, (pair.place.start, pair.place.end))
    return pair_feature(c, l)


def build_feature_matrix(
    pairs: Sequence[CandidatePair], table: EmbeddingTable
) -> tuple[list[str], np.ndarray]:
    """Stack pair features into an (n, 2*dim) float64 matrix, pair order kept."""
    ids = [p.pair_id for p in pairs]
    if not pairs:
        return ids, np.zeros((0, 2 * table.dim))
    return ids, np.stack([build_pair_feature(p, table) for p in pairs])


# ---------------------------------------------------------------------------
# Deterministic hash provider (test double for a real encoder)
# ---------------------------------------------------------------------------

class HashEmbeddingProvider:
    """Pseudo-embeddings keyed on token text: entry j of the vector for text
    t is a hash of (seed, t, j) mapped into [-1, 1]. Identical token texts
    always receive identical vectors; different seeds give different tables.
    """

    def __init__(self, seed: int, dim: int = 16):
        if dim <= 0:
            raise EmbeddingError(f"dim must be positive, got {dim}")
        self.seed = seed
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}

    def token_vector(self, text: str) -> np.ndarray:
        vec = self._cache.get(text)
        if vec is None:
            values = np.empty(self.dim, dtype=np.float64)
            for j in range(self.dim):
                digest = hashlib.sha256(f"{self.seed}|{text}|{j}".encode()).digest()
                raw = int.from_bytes(digest[:8], "little")
                values[j] = raw / float(2**64 - 1) * 2.0 - 1.0
            vec = values.astype(np.float32)
            self._cache[text] = vec
        return vec

    def encode_window(self, doc: Document, start: int, end: int) -> np.ndarray:
        return np.stack(
            [self.token_vector(doc.tokens[i].text) for i in range(start, end + 1)]
        )

    def table_for_pairs(
        self, doc: Document, pairs: Sequence[CandidatePair], width: int
    ) -> EmbeddingTable:
        table = EmbeddingTable(self.dim)
        for pair in pairs:
            lo, hi = context_window(pair, doc, width)
            table.add(WindowEmbedding(pair.pair_id, lo, self.encode_window(doc, lo, hi)))
        return table


def hash_provider(seed: int, dim: int = 16) -> HashEmbeddingProvider:
    return HashEmbeddingProvider(seed, dim=dim)


# ---------------------------------------------------------------------------
# Binary serialization
# ---------------------------------------------------------------------------

def dump_embeddings(table: EmbeddingTable) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<II", table.dim, len(table)))
    for pair_id in sorted(table.pair_ids()):
        entry = table[pair_id]
        encoded = pair_id.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise EmbeddingError(f"pair_id too long to serialize: {pair_id[:40]!r}...")
        out.write(struct.pack("<H", len(encoded)))
        out.write(encoded)
        out.write(struct.pack("<II", entry.window_start, len(entry.vectors)))
        out.write(np.ascontiguousarray(entry.vectors, dtype="<f4").tobytes())
    return out.getvalue()


def write_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    atomic_write_bytes(path, dump_embeddings(table))


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise EmbeddingFormatError(
            f"truncated file: expected {n} bytes for {what}, got {len(data)}"
        )
    return data


def parse_embeddings(data: bytes) -> EmbeddingTable:
    fh = io.BytesIO(data)
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise EmbeddingFormatError(f"bad magic: expected {MAGIC!r}, got {magic!r}")
    dim, count = struct.unpack("<II", _read_exact(fh, 8, "header"))
    table = EmbeddingTable(dim)
    for i in range(count):
        (id_len,) = struct.unpack("<H", _read_exact(fh, 2, f"record {i} id length"))
        pair_id = _read_exact(fh, id_len, f"record {i} pair_id").decode("utf-8")
        window_start, window_len = struct.unpack(
            "<II", _read_exact(fh, 8, f"record {i} window header")
        )
        raw = _read_exact(fh, window_len * dim * 4, f"record {i} matrix")
        vectors = np.frombuffer(raw, dtype="<f4").reshape(window_len, dim)
        try:
            table.add(WindowEmbedding(pair_id, window_start, vectors))
        except EmbeddingError as exc:
            raise EmbeddingFormatError(str(exc)) from exc
    trailing = fh.read(1)
    if trailing:
        raise EmbeddingFormatError("trailing bytes after last record")
    return table


def load_embeddings(path: str | Path) -> EmbeddingTable:
    with open(path, "rb") as fh:
        return parse_embeddings(fh.read())
