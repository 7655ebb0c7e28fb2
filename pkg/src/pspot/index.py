"""Per-level embedding index: exact top-K dot/cosine search and the PSPX
on-disk format.

Search is deliberately brute force. The region filter is the speed mechanism
of the pipeline; the index itself scores every retained embedding and must
match a naive full-sort oracle exactly, tie order included.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embedder import CHANNELS
from .errors import CorruptIndex, VersionMismatch

_MAGIC = b"PSPX"
_VERSION = 1
_HEADER = struct.Struct("<4sIBIQ")  # magic, version, level_k, dim, count

RECORD_DTYPE = np.dtype(
    [
        ("page", "<u4"),
        ("tile", "<u2"),
        ("i", "<u2"),
        ("j", "<u2"),
        ("vec", "<f4", (CHANNELS,)),
    ]
)
RECORD_VECTOR_BYTES = CHANNELS * 4


@dataclass
class IndexShard:
    """Immutable searchable set of retained embeddings at one level."""

    level_k: int
    records: np.ndarray = field(repr=False)  # structured RECORD_DTYPE array

    @property
    def count(self) -> int:
        return len(self.records)

    @property
    def vectors(self) -> np.ndarray:
        return self.records["vec"]


@dataclass(frozen=True)
class SearchHit:
    score: float
    page: int
    tile: int
    i: int
    j: int


def empty_shard(level_k: int) -> IndexShard:
    return IndexShard(level_k=level_k, records=np.empty(0, RECORD_DTYPE))


def build_index(items) -> dict[int, IndexShard]:
    """Assemble shards from an iterable of (grid, page, tile, retained-cells)
    tuples.

    One record per retained cell. Records are sorted by
    (page, tile, i, j), which makes the build order-insensitive and fixes
    the search tie order. Grids are consumed lazily; only their float32
    records are kept.
    """
    per_level: dict[int, list[np.ndarray]] = {}
    for grid, page, tile, retained in items:
        if tile > np.iinfo(np.uint16).max or page > np.iinfo(np.uint32).max:
            raise ValueError(f"page/tile id out of range: page={page} tile={tile}")
        if not retained:
            per_level.setdefault(grid.level.k, [])
            continue
        cells = np.array(sorted(retained), np.int64)
        block = np.empty(len(cells), RECORD_DTYPE)
        block["page"] = page
        block["tile"] = tile
        block["i"] = cells[:, 0]
        block["j"] = cells[:, 1]
        block["vec"] = grid.vectors[cells[:, 0], cells[:, 1]].astype(np.float32)
        per_level.setdefault(grid.level.k, []).append(block)

    shards = {}
    for k, blocks in per_level.items():
        if blocks:
            records = np.concatenate(blocks)
            order = np.lexsort(
                (records["j"], records["i"], records["tile"], records["page"])
            )
            shards[k] = IndexShard(level_k=k, records=records[order])
        else:
            shards[k] = empty_shard(k)
    return shards


_SCORE_CHUNK = 1 << 16


def _scores(vectors: np.ndarray, q: np.ndarray, measure: str) -> np.ndarray:
    """Similarity of every record to the query, accumulated in float64.

    Chunked so the float64 upcast of a large shard never materializes
    whole.
    """
    if measure not in ("dot", "cosine"):
        raise ValueError(f"unknown measure {measure!r}")
    q64 = np.asarray(q, np.float64)
    n = len(vectors)
    out = np.empty(n)
    qn = float(np.linalg.norm(q64))
    for start in range(0, n, _SCORE_CHUNK):
        block = vectors[start : start + _SCORE_CHUNK].astype(np.float64)
        dots = block @ q64
        if measure == "cosine":
            denom = qn * np.linalg.norm(block, axis=1)
            ok = denom > 0.0
            dots = np.where(ok, dots / np.where(ok, denom, 1.0), 0.0)
        out[start : start + len(dots)] = dots
    return out


def search(
    shard: IndexShard, q: np.ndarray, top_k: int, measure: str = "dot"
) -> list[SearchHit]:
    """Exact top-K records by similarity, ties broken by record order
    (page, tile, i, j). Asking for more hits than exist returns them all."""
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    q = np.asarray(q)
    if q.shape != (CHANNELS,):
        raise ValueError(f"query vector shape {q.shape}, expected ({CHANNELS},)")
    if not np.all(np.isfinite(q)):
        raise ValueError("query vector must be finite")
    if shard.count == 0:
        return []
    scores = _scores(shard.vectors, q, measure)
    order = np.argsort(-scores, kind="stable")[:top_k]
    recs = shard.records[order]
    return [
        SearchHit(
            score=float(scores[row]),
            page=int(rec["page"]),
            tile=int(rec["tile"]),
            i=int(rec["i"]),
            j=int(rec["j"]),
        )
        for row, rec in zip(order, recs)
    ]


def _shard_path(directory: Path, level_k: int) -> Path:
    return directory / f"level{level_k}.pspx"


def save_shard(shard: IndexShard, path: str | Path) -> None:
    body = _HEADER.pack(_MAGIC, _VERSION, shard.level_k, CHANNELS, shard.count)
    body += shard.records.tobytes()
    crc = zlib.crc32(body) & 0xFFFFFFFF
    Path(path).write_bytes(body + struct.pack("<I", crc))


def load_shard(path: str | Path) -> IndexShard:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size + 4:
        raise CorruptIndex(f"file too short: {path}")
    magic, version, level_k, dim, count = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise CorruptIndex(f"bad magic in {path}")
    if version != _VERSION:
        raise VersionMismatch(f"index version {version}, expected {_VERSION}")
    if dim != CHANNELS:
        raise CorruptIndex(f"unsupported vector dim {dim} in {path}")
    expected = _HEADER.size + count * RECORD_DTYPE.itemsize + 4
    if len(data) != expected:
        raise CorruptIndex(
            f"truncated index {path}: {len(data)} bytes, expected {expected}"
        )
    (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CorruptIndex(f"checksum mismatch in {path}")
    records = np.frombuffer(data, RECORD_DTYPE, count=count, offset=_HEADER.size)
    return IndexShard(level_k=level_k, records=records.copy())


def save_index(shards: dict[int, IndexShard], directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for k, shard in shards.items():
        save_shard(shard, _shard_path(directory, k))


def load_index(directory: str | Path) -> dict[int, IndexShard]:
    directory = Path(directory)
    shards = {}
    for path in sorted(directory.glob("level*.pspx")):
        shard = load_shard(path)
        shards[shard.level_k] = shard
    if not shards:
        raise CorruptIndex(f"no index shards found in {directory}")
    return shards
