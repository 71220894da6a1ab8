import io
import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pqlm.embedport import MAGIC, decode_embeddings, encode_embeddings, read_embeddings, write_embeddings
from pqlm.errors import CorruptionError, FormatError, InputError
from pqlm.textprep import RESERVED, Vocab

SMALL_VOCAB = list(RESERVED) + ["a"]


def test_layout_arithmetic():
    data = encode_embeddings(np.zeros((5, 2)), SMALL_VOCAB)
    magic, version, flags, rows, dim = struct.unpack_from("<4sIIII", data)
    assert (magic, version, flags, rows, dim) == (b"PQLM", 1, 0, 5, 2)
    table = sum(2 + len(t.encode()) for t in SMALL_VOCAB)
    assert len(data) == 20 + table + 40 + 4
    # matrix bytes are all zero, trailer is the CRC of everything before it
    assert data[20 + table : -4] == bytes(40)
    assert struct.unpack("<I", data[-4:])[0] == zlib.crc32(data[:-4])


def test_empty_vocab_rejected():
    with pytest.raises(InputError):
        encode_embeddings(np.zeros((0, 2)), [])


def test_shape_mismatch_rejected():
    with pytest.raises(InputError):
        encode_embeddings(np.zeros((4, 2)), SMALL_VOCAB)


def test_deterministic_bytes(tmp_path, rng):
    m = rng.normal(size=(5, 3))
    write_embeddings(m, SMALL_VOCAB, tmp_path / "a.pqlm")
    write_embeddings(m, SMALL_VOCAB, tmp_path / "b.pqlm")
    assert (tmp_path / "a.pqlm").read_bytes() == (tmp_path / "b.pqlm").read_bytes()


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(1, 16), st.integers(0, 2**32 - 1))
def test_round_trip_bit_exact_binary32(extra, dim, seed):
    rng = np.random.default_rng(seed)
    vocab = Vocab(list(RESERVED) + [f"tok{k}é" for k in range(extra)])
    m = rng.normal(scale=5, size=(len(vocab), dim))
    got, v2 = decode_embeddings(encode_embeddings(m, vocab))
    assert got.dtype == np.float32
    assert got.tobytes() == m.astype("<f4").tobytes()
    assert v2 == vocab


def test_read_from_path_stream_and_bytes(tmp_path, rng):
    m = rng.normal(size=(5, 2))
    n = write_embeddings(m, SMALL_VOCAB, tmp_path / "e.pqlm")
    data = (tmp_path / "e.pqlm").read_bytes()
    assert n == len(data)
    sink = io.BytesIO()
    write_embeddings(m, SMALL_VOCAB, sink)
    assert sink.getvalue() == data
    for source in (tmp_path / "e.pqlm", str(tmp_path / "e.pqlm"), io.BytesIO(data), data):
        got, vocab = read_embeddings(source)
        assert got.shape == (5, 2) and vocab.tokens == SMALL_VOCAB


def test_single_byte_flips_detected(rng):
    data = encode_embeddings(rng.normal(size=(5, 4)), SMALL_VOCAB)
    for _ in range(100):
        pos = int(rng.integers(len(data)))
        bad = bytearray(data)
        bad[pos] ^= int(rng.integers(1, 256))
        with pytest.raises(FormatError):
            decode_embeddings(bytes(bad))


def test_payload_flip_is_corruption(rng):
    data = bytearray(encode_embeddings(rng.normal(size=(5, 4)), SMALL_VOCAB))
    data[-10] ^= 0x01
    with pytest.raises(CorruptionError):
        decode_embeddings(bytes(data))


def test_bad_magic_is_format_error():
    data = b"XQLM" + encode_embeddings(np.zeros((5, 2)), SMALL_VOCAB)[4:]
    with pytest.raises(FormatError) as exc:
        decode_embeddings(data)
    assert not isinstance(exc.value, CorruptionError)


@pytest.mark.parametrize("cut", [0, 3, 19, 30, -5])
def test_truncation_is_format_error(cut):
    data = encode_embeddings(np.ones((5, 2)), SMALL_VOCAB)
    with pytest.raises(FormatError):
        decode_embeddings(data[:cut])


def test_magic_constant():
    assert MAGIC == b"PQLM"
