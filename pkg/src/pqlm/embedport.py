"""Reader and writer for the portable ``.pqlm`` embedding file.

Layout (all integers little-endian)::

    b"PQLM"  u32 version=1  u32 flags=0  u32 vocab_size  u32 dim
    vocab_size x (u16 byte_length, UTF-8 token bytes)      # id order
    vocab_size x dim float32, row-major
    u32 CRC-32 over every preceding byte
"""
from __future__ import annotations

import io
import struct
import zlib
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import CorruptionError, FormatError, InputError
from .textprep import Vocab

MAGIC = b"PQLM"
VERSION = 1
EXTENSION = ".pqlm"
_HEADER = struct.Struct("<4sIIII")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")


def encode_embeddings(matrix, vocab: Vocab | list[str]) -> bytes:
    matrix = np.asarray(matrix)
    tokens = vocab.tokens if isinstance(vocab, Vocab) else list(vocab)
    if len(tokens) == 0:
        raise InputError("cannot export an empty vocab")
    if matrix.ndim != 2 or matrix.shape[0] != len(tokens):
        raise InputError(
            f"matrix shape {matrix.shape} does not match vocab size {len(tokens)}"
        )
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION, 0, matrix.shape[0], matrix.shape[1]))
    for tok in tokens:
        raw = tok.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise InputError(f"token too long to serialize ({len(raw)} bytes)")
        buf.write(_U16.pack(len(raw)))
        buf.write(raw)
    buf.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())
    body = buf.getvalue()
    return body + _U32.pack(zlib.crc32(body))


def write_embeddings(matrix, vocab: Vocab | list[str], sink: BinaryIO | str | Path) -> int:
    """Serialize to ``sink`` (a path or binary stream); returns bytes written."""
    data = encode_embeddings(matrix, vocab)
    if isinstance(sink, (str, Path)):
        Path(sink).write_bytes(data)
    else:
        sink.write(data)
    return len(data)


def decode_embeddings(data: bytes) -> tuple[np.ndarray, Vocab]:
    if len(data) < _HEADER.size + _U32.size:
        raise FormatError("file too short for a .pqlm header")
    magic, version, flags, rows, dim = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    body, trailer = data[:-4], data[-4:]
    if _U32.unpack(trailer)[0] != zlib.crc32(body):
        raise CorruptionError("CRC-32 mismatch")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if flags != 0:
        raise FormatError(f"unsupported flags {flags:#x}")
    pos = _HEADER.size
    tokens = []
    for _ in range(rows):
        if pos + 2 > len(body):
            raise FormatError("truncated token table")
        (n,) = _U16.unpack_from(body, pos)
        pos += 2
        if pos + n > len(body):
            raise FormatError("truncated token table")
        try:
            tokens.append(body[pos : pos + n].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError("token is not valid UTF-8") from exc
        pos += n
    expected = rows * dim * 4
    if len(body) - pos != expected:
        raise FormatError(
            f"matrix payload is {len(body) - pos} bytes, header declares {expected}"
        )
    matrix = np.frombuffer(body, dtype="<f4", count=rows * dim, offset=pos)
    try:
        vocab = Vocab(tokens)
    except InputError as exc:
        raise FormatError(str(exc)) from exc
    return matrix.reshape(rows, dim).astype(np.float32), vocab


def read_embeddings(source: BinaryIO | str | Path) -> tuple[np.ndarray, Vocab]:
    """Parse a ``.pqlm`` file; the matrix comes back as float32."""
    if isinstance(source, (str, Path)):
        data = Path(source).read_bytes()
    elif isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        data = source.read()
    return decode_embeddings(data)
