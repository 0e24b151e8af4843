import io
import struct
import zlib

import numpy as np
import pytest

from hyperhash.errors import CorruptFileError, InvalidArgumentError
from hyperhash.hamming_index import (
    PackedCode,
    hamming,
    index_build,
    index_from_bytes,
    index_from_codes,
    index_load,
    index_save,
    index_to_bytes,
    pack,
    pack_rows,
    popcount,
    query_topk,
    unpack,
    unpack_rows,
    words_for,
)


def _codes(rng, count, l_bits):
    return np.where(rng.random((count, l_bits)) < 0.5, 1, -1).astype(np.int8)


def _linear_scan(ids, codes, query, k):
    scored = [(int(np.sum(code != query)), int(item_id)) for item_id, code in zip(ids, codes)]
    return [(item_id, distance) for distance, item_id in sorted(scored)[:k]]


def _reseal(payload: bytes) -> bytes:
    body = payload[:-4]
    return body + struct.pack("<I", zlib.crc32(body))


class TestPacking:

    def test_word_count(self):
        assert [words_for(n) for n in (1, 63, 64, 65, 128, 129)] == [1, 1, 1, 2, 2, 3]

    def test_bit_layout(self):
        code = -np.ones(70, dtype=np.int8)
        code[[0, 3, 64]] = 1
        packed = pack(code)
        assert packed.words.tolist() == [0b1001, 1]

    def test_unused_bits_are_zero(self, rng):
        packed = pack_rows(np.ones((3, 10), dtype=np.int8))
        assert np.all(packed == (1 << 10) - 1)

    def test_unpack_inverts_pack(self, rng):
        codes = _codes(rng, 5, 97)
        np.testing.assert_array_equal(unpack_rows(pack_rows(codes), 97), codes)
        np.testing.assert_array_equal(unpack(pack(codes[2])), codes[2])

    def test_rejects_non_bipolar(self):
        with pytest.raises(InvalidArgumentError):
            pack_rows(np.array([[1, 0, -1]]))

    def test_popcount(self):
        words = np.array([[0, 2 ** 64 - 1], [5, 1 << 63]], dtype=np.uint64)
        np.testing.assert_array_equal(popcount(words), [64, 3])

    def test_hamming_and_inner_product(self, rng):
        a, b = _codes(rng, 2, 150)
        distance = hamming(pack(a), pack(b))
        assert distance == int(np.sum(a != b))
        assert int(np.dot(a.astype(int), b.astype(int))) == 150 - 2 * distance

    def test_hamming_width_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            hamming(pack(np.ones(8)), pack(np.ones(9)))


class TestIndexBuild:

    def test_sorted_by_id(self, rng):
        codes = _codes(rng, 3, 16)
        index = index_build([(9, codes[0]), (2, codes[1]), (5, codes[2])])
        assert index.ids.tolist() == [2, 5, 9]
        assert index.code_of(9) == pack(codes[0])

    def test_duplicate_ids(self, rng):
        codes = _codes(rng, 2, 16)
        with pytest.raises(InvalidArgumentError):
            index_build([(1, codes[0]), (1, codes[1])])

    def test_mixed_widths(self):
        with pytest.raises(InvalidArgumentError):
            index_build([(1, np.ones(8)), (2, np.ones(16))])

    def test_empty_index(self):
        index = index_build([], l_bits=32)
        assert len(index) == 0
        assert query_topk(index, pack(np.ones(32)), 5) == []
        with pytest.raises(InvalidArgumentError):
            index_build([])

    def test_unknown_id(self, rng):
        index = index_from_codes([1, 2], _codes(rng, 2, 8))
        with pytest.raises(InvalidArgumentError):
            index.code_of(3)


class TestQueryTopk:

    def test_matches_linear_scan(self):
        """10^4 random instances agree with a sorted linear scan, ties broken by id."""
        rng = np.random.default_rng(2024)
        for _ in range(10_000):
            count = int(rng.integers(1, 30))
            l_bits = int(rng.integers(1, 130))
            ids = rng.choice(10_000, count, replace=False)
            codes = _codes(rng, count, l_bits)
            if rng.random() < 0.3:
                codes[rng.integers(0, count, count)] = codes[0]
            query = _codes(rng, 1, l_bits)[0]
            k = int(rng.integers(1, count + 5))
            index = index_from_codes(ids, codes)
            assert query_topk(index, pack(query), k) == _linear_scan(ids, codes, query, k)

    def test_exact_copy_ranks_first(self, rng):
        codes = _codes(rng, 50, 64)
        index = index_from_codes(np.arange(50), codes)
        assert query_topk(index, pack(codes[17]), 1) == [(17, 0)]

    def test_ties_by_ascending_id(self):
        code = np.ones(8, dtype=np.int8)
        index = index_from_codes([7, 3, 5], np.vstack([code, code, code]))
        assert query_topk(index, pack(code), 3) == [(3, 0), (5, 0), (7, 0)]

    def test_k_larger_than_index(self, rng):
        index = index_from_codes([1, 2], _codes(rng, 2, 8))
        assert len(query_topk(index, pack(np.ones(8)), 10)) == 2

    @pytest.mark.parametrize("k", [0, -1, 1.5])
    def test_invalid_k(self, rng, k):
        index = index_from_codes([1], _codes(rng, 1, 8))
        with pytest.raises(InvalidArgumentError):
            query_topk(index, pack(np.ones(8)), k)

    def test_width_mismatch(self, rng):
        index = index_from_codes([1], _codes(rng, 1, 8))
        with pytest.raises(InvalidArgumentError):
            query_topk(index, PackedCode(np.zeros(1, dtype=np.uint64), 9), 1)


class TestIndexFile:

    @pytest.fixture
    def index(self, rng):
        return index_from_codes(rng.choice(1000, 20, replace=False), _codes(rng, 20, 100),
                                {"l_bits": 100, "dimension": 256, "encoder": "abc"})

    def test_round_trip_is_byte_identical(self, index, tmp_path):
        path = tmp_path / "index.nhix"
        index_save(index, path)
        loaded = index_load(path)
        assert loaded == index
        assert index_to_bytes(loaded) == path.read_bytes()

    def test_file_objects(self, index):
        buffer = io.BytesIO()
        index_save(index, buffer)
        buffer.seek(0)
        assert index_load(buffer) == index

    def test_loaded_index_answers_identically(self, index, rng):
        loaded = index_from_bytes(index_to_bytes(index))
        for query in _codes(rng, 5, 100):
            assert query_topk(loaded, pack(query), 7) == query_topk(index, pack(query), 7)

    def test_empty_round_trip(self):
        index = index_build([], l_bits=16)
        assert index_from_bytes(index_to_bytes(index)) == index

    def test_truncated(self, index):
        with pytest.raises(CorruptFileError) as caught:
            index_from_bytes(index_to_bytes(index)[:-9])
        assert caught.value.field == "length"
        with pytest.raises(CorruptFileError) as caught:
            index_from_bytes(b"NHIX")
        assert caught.value.field == "length"

    def test_bad_magic(self, index):
        with pytest.raises(CorruptFileError) as caught:
            index_from_bytes(b"XXXX" + index_to_bytes(index)[4:])
        assert caught.value.field == "magic"

    def test_unsupported_version(self, index):
        payload = bytearray(index_to_bytes(index))
        payload[4:6] = struct.pack("<H", 99)
        with pytest.raises(CorruptFileError) as caught:
            index_from_bytes(bytes(payload))
        assert caught.value.field == "version"

    def test_flipped_bit_fails_checksum(self, index):
        payload = bytearray(index_to_bytes(index))
        payload[-10] ^= 0x01
        with pytest.raises(CorruptFileError) as caught:
            index_from_bytes(bytes(payload))
        assert caught.value.field == "checksum"

    def test_unsorted_ids(self, rng):
        index = index_from_codes([1, 2], _codes(rng, 2, 8))
        payload = bytearray(index_to_bytes(index))
        ids_at = len(payload) - 4 - 2 * 8 - 2 * 8
        payload[ids_at:ids_at + 16] = struct.pack("<qq", 2, 1)
        with pytest.raises(CorruptFileError) as caught:
            index_from_bytes(_reseal(bytes(payload)))
        assert caught.value.field == "ids"

    def test_path_in_message(self, tmp_path):
        path = tmp_path / "broken.nhix"
        path.write_bytes(b"garbage")
        with pytest.raises(CorruptFileError, match="broken.nhix"):
            index_load(path)
