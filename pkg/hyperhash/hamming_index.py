"""Bit-packed bipolar codes, exact top-K Hamming search and the index file.

Codes are packed into little-endian 64-bit words; bit j of the code (word
j // 64, bit j % 64) is set iff entry j is +1. Unused high bits are zero.

Index file layout (all integers little-endian):

    magic      4 bytes   b"NHIX"
    version    u16
    flags      u16       bit 0 set: little-endian words, code position 0 in bit 0
    l_bits     u32
    dimension  u32       hypervector dimension D (0 if unknown)
    count      u64
    meta_len   u32
    metadata   meta_len bytes of UTF-8 JSON, keys sorted
    ids        count x i64, strictly increasing
    words      count x ceil(l_bits / 64) x u64
    checksum   u32       CRC-32 of every preceding byte
"""

import io
import json
import logging
import os
import struct
import zlib
from dataclasses import dataclass, field
from typing import Any, BinaryIO, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import CorruptFileError, InvalidArgumentError, require

logger = logging.getLogger(__name__)

INDEX_MAGIC = b"NHIX"
INDEX_VERSION = 1
LAYOUT_LITTLE_ENDIAN = 0x0001
_HEADER = struct.Struct("<4sHHIIQI")
_CHECKSUM = struct.Struct("<I")
_WORD = np.dtype("<u8")
_POPCOUNT_TABLE = np.array([bin(value).count("1") for value in range(256)], dtype=np.uint8)


def words_for(l_bits: int) -> int:
    return (int(l_bits) + 63) // 64


def popcount(words: np.ndarray) -> np.ndarray:
    """Set bits per row of a (..., W) uint64 array."""
    octets = np.ascontiguousarray(words, dtype=_WORD).view(np.uint8)
    return _POPCOUNT_TABLE[octets].sum(axis=-1, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class PackedCode:
    """An L-bit bipolar code packed into 64-bit words."""

    words: np.ndarray
    l_bits: int

    def __eq__(self, other) -> bool:
        if not isinstance(other, PackedCode):
            return NotImplemented
        return self.l_bits == other.l_bits and np.array_equal(self.words, other.words)

    def __hash__(self) -> int:
        return hash((self.l_bits, self.words.tobytes()))


def _check_bipolar(codes: np.ndarray) -> None:
    if not np.all((codes == 1) | (codes == -1)):
        raise InvalidArgumentError("codes must contain only -1 and +1")


def pack_rows(codes) -> np.ndarray:
    """Pack an (M, L) bipolar matrix into an (M, W) uint64 matrix."""
    codes = np.asarray(codes)
    require(codes.ndim == 2, f"expected an (M, L) code matrix, got shape {codes.shape}")
    _check_bipolar(codes)
    count, l_bits = codes.shape
    packed = np.packbits(codes == 1, axis=1, bitorder="little")
    padded = np.zeros((count, words_for(l_bits) * 8), dtype=np.uint8)
    padded[:, :packed.shape[1]] = packed
    return padded.view(_WORD).reshape(count, words_for(l_bits))


def unpack_rows(words, l_bits: int) -> np.ndarray:
    """Inverse of pack_rows."""
    words = np.ascontiguousarray(words, dtype=_WORD)
    bits = np.unpackbits(words.view(np.uint8), axis=-1, bitorder="little")[..., :l_bits]
    return np.where(bits == 1, 1, -1).astype(np.int8)


def pack(code) -> PackedCode:
    """Pack one bipolar code row."""
    code = np.asarray(code)
    require(code.ndim == 1 and code.shape[0] >= 1, f"expected a code row, got shape {code.shape}")
    return PackedCode(pack_rows(code[None, :])[0], int(code.shape[0]))


def unpack(code: PackedCode) -> np.ndarray:
    return unpack_rows(code.words[None, :], code.l_bits)[0]


def hamming(a: PackedCode, b: PackedCode) -> int:
    """Number of differing bits; the code inner product equals L - 2 * hamming."""
    if a.l_bits != b.l_bits:
        raise InvalidArgumentError(f"code width mismatch: {a.l_bits} != {b.l_bits}")
    return int(popcount(np.bitwise_xor(a.words, b.words)))


@dataclass(eq=False)
class RetrievalIndex:
    """Immutable table of packed codes sorted by item id."""

    ids: np.ndarray
    words: np.ndarray
    l_bits: int
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, RetrievalIndex):
            return NotImplemented
        return (self.l_bits == other.l_bits
                and np.array_equal(self.ids, other.ids)
                and np.array_equal(self.words, other.words)
                and self.metadata == other.metadata)

    def code_of(self, item_id: int) -> PackedCode:
        position = int(np.searchsorted(self.ids, item_id))
        if position >= len(self) or self.ids[position] != item_id:
            raise InvalidArgumentError(f"item {item_id} is not in the index")
        return PackedCode(self.words[position], self.l_bits)


def index_build(
    items: Sequence[Tuple[int, np.ndarray]],
    metadata: Optional[Dict[str, Any]] = None,
    l_bits: Optional[int] = None,
) -> RetrievalIndex:
    """
    Build an index from (item_id, bipolar code row) pairs.

    Args:
        items: Pairs in any order
        metadata: JSON-serialisable settings stored with the index
        l_bits: Code width; required only when `items` is empty

    Raises:
        InvalidArgumentError: on duplicate ids or mixed code widths
    """
    metadata = dict(metadata or {})
    if not items:
        width = l_bits if l_bits is not None else metadata.get("l_bits")
        require(width is not None and int(width) >= 1, "an empty index needs l_bits")
        return RetrievalIndex(np.zeros(0, dtype=np.int64),
                              np.zeros((0, words_for(width)), dtype=_WORD), int(width), metadata)
    ids = np.array([int(item_id) for item_id, _ in items], dtype=np.int64)
    widths = {np.asarray(code).shape for _, code in items}
    require(len(widths) == 1, f"codes have mixed shapes {sorted(widths)}")
    codes = np.vstack([np.asarray(code) for _, code in items])
    return index_from_codes(ids, codes, metadata)


def index_from_codes(ids, codes, metadata: Optional[Dict[str, Any]] = None) -> RetrievalIndex:
    """Vectorised index_build for an id array and an (M, L) bipolar matrix."""
    ids = np.asarray(ids, dtype=np.int64)
    codes = np.asarray(codes)
    require(codes.ndim == 2 and codes.shape[0] == ids.shape[0],
            f"{ids.shape[0]} ids for a code matrix of shape {codes.shape}")
    unique, counts = np.unique(ids, return_counts=True)
    if np.any(counts > 1):
        raise InvalidArgumentError(f"duplicate item id {int(unique[counts > 1][0])}")
    order = np.argsort(ids, kind="stable")
    words = pack_rows(codes[order])
    index = RetrievalIndex(ids[order], words, int(codes.shape[1]), dict(metadata or {}))
    logger.info("built index of %d items with %d-bit codes", len(index), index.l_bits)
    return index


def query_topk(index: RetrievalIndex, code: PackedCode, k: int) -> List[Tuple[int, int]]:
    """
    Exact top-k search by Hamming distance.

    Returns:
        min(k, len(index)) (item_id, distance) pairs, ascending distance, ties by ascending id
    """
    require(int(k) == k and k >= 1, f"k must be a positive integer, got {k}")
    if code.l_bits != index.l_bits:
        raise InvalidArgumentError(f"code width mismatch: query {code.l_bits}, index {index.l_bits}")
    if len(index) == 0:
        return []
    distances = popcount(np.bitwise_xor(index.words, code.words[None, :]))
    order = np.lexsort((index.ids, distances))[:int(k)]
    return [(int(index.ids[i]), int(distances[i])) for i in order]


def index_to_bytes(index: RetrievalIndex) -> bytes:
    metadata = json.dumps(index.metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    dimension = int(index.metadata.get("dimension", 0))
    buffer = io.BytesIO()
    buffer.write(_HEADER.pack(INDEX_MAGIC, INDEX_VERSION, LAYOUT_LITTLE_ENDIAN,
                              index.l_bits, dimension, len(index), len(metadata)))
    buffer.write(metadata)
    buffer.write(np.ascontiguousarray(index.ids, dtype="<i8").tobytes())
    buffer.write(np.ascontiguousarray(index.words, dtype=_WORD).tobytes())
    payload = buffer.getvalue()
    return payload + _CHECKSUM.pack(zlib.crc32(payload))


def index_from_bytes(data: bytes, path: Optional[str] = None) -> RetrievalIndex:
    if len(data) < _HEADER.size + _CHECKSUM.size:
        raise CorruptFileError("length", f"{len(data)} bytes is shorter than the header", path)
    magic, version, flags, l_bits, _dimension, count, meta_len = _HEADER.unpack_from(data)
    if magic != INDEX_MAGIC:
        raise CorruptFileError("magic", f"expected {INDEX_MAGIC!r}, found {magic!r}", path)
    if version != INDEX_VERSION:
        raise CorruptFileError("version", f"unsupported version {version}", path)
    if flags != LAYOUT_LITTLE_ENDIAN:
        raise CorruptFileError("flags", f"unsupported layout flags {flags:#06x}", path)
    if l_bits < 1:
        raise CorruptFileError("l_bits", "code width must be positive", path)
    width = words_for(l_bits)
    expected = _HEADER.size + meta_len + count * 8 + count * width * 8 + _CHECKSUM.size
    if len(data) != expected:
        raise CorruptFileError("length", f"expected {expected} bytes, found {len(data)}", path)
    (stored,) = _CHECKSUM.unpack_from(data, len(data) - _CHECKSUM.size)
    if zlib.crc32(data[:-_CHECKSUM.size]) != stored:
        raise CorruptFileError("checksum", "CRC-32 does not match the contents", path)

    offset = _HEADER.size
    try:
        metadata = json.loads(data[offset:offset + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptFileError("metadata", str(e), path) from e
    offset += meta_len
    ids = np.frombuffer(data, dtype="<i8", count=count, offset=offset).astype(np.int64)
    offset += count * 8
    words = np.frombuffer(data, dtype=_WORD, count=count * width, offset=offset)
    words = words.reshape(count, width).copy()
    if count > 1 and np.any(np.diff(ids) <= 0):
        raise CorruptFileError("ids", "item ids are not strictly increasing", path)
    return RetrievalIndex(ids, words, int(l_bits), metadata)


def index_save(index: RetrievalIndex, sink: Union[str, os.PathLike, BinaryIO]) -> None:
    """Write the index to a path or a binary file object."""
    payload = index_to_bytes(index)
    if hasattr(sink, "write"):
        sink.write(payload)
    else:
        with open(sink, "wb") as f:
            f.write(payload)
    logger.debug("saved index of %d items (%d bytes)", len(index), len(payload))


def index_load(source: Union[str, os.PathLike, BinaryIO]) -> RetrievalIndex:
    """Read an index written by index_save."""
    if hasattr(source, "read"):
        return index_from_bytes(source.read())
    with open(source, "rb") as f:
        return index_from_bytes(f.read(), str(source))
