"""LZ4 block compression for image-complexity estimation.

A greedy hash-chain encoder producing standard LZ4 block streams (token
byte with 4-bit literal/match nibbles, 255-extension bytes, little-endian
2-byte offsets, minimum match 4, last 5 bytes literal, no matches starting
in the final 12 bytes).  `compressed_size` wraps the block in a fixed
8-byte container so the measured size is fully specified.

Only the compressed length is consumed downstream; `decompress_block`
exists so tests can verify the stream is genuine LZ4.
"""

from __future__ import annotations

import struct

_MAGIC = b"LZ4B"
_MIN_MATCH = 4
_MAX_DISTANCE = 65535
_MF_LIMIT = 12  # no match may start closer than this to the end
_LAST_LITERALS = 5


def compress_block(data: bytes) -> bytes:
    n = len(data)
    out = bytearray()
    if n == 0:
        out.append(0)
        return bytes(out)
    table: dict[bytes, int] = {}
    anchor = 0
    i = 0
    match_limit = n - _MF_LIMIT
    while i < match_limit:
        key = data[i : i + 4]
        cand = table.get(key)
        table[key] = i
        if cand is None or i - cand > _MAX_DISTANCE:
            i += 1
            continue
        # extend the match forward, leaving the last literals untouched
        max_len = n - _LAST_LITERALS - i
        mlen = 4
        while mlen < max_len and data[cand + mlen] == data[i + mlen]:
            mlen += 1
        _emit_sequence(out, data, anchor, i, i - cand, mlen)
        i += mlen
        anchor = i
    _emit_tail(out, data, anchor, n)
    return bytes(out)


def _emit_sequence(out: bytearray, data: bytes, anchor: int, pos: int, offset: int, mlen: int):
    lit_len = pos - anchor
    match_code = mlen - _MIN_MATCH
    token = (min(lit_len, 15) << 4) | min(match_code, 15)
    out.append(token)
    _emit_extension(out, lit_len)
    out.extend(data[anchor:pos])
    out.append(offset & 0xFF)
    out.append((offset >> 8) & 0xFF)
    _emit_extension(out, match_code)


def _emit_tail(out: bytearray, data: bytes, anchor: int, end: int):
    lit_len = end - anchor
    out.append(min(lit_len, 15) << 4)
    _emit_extension(out, lit_len)
    out.extend(data[anchor:end])


def _emit_extension(out: bytearray, value: int):
    if value < 15:
        return
    value -= 15
    while value >= 255:
        out.append(255)
        value -= 255
    out.append(value)


def decompress_block(block: bytes, expected_size: int | None = None) -> bytes:
    out = bytearray()
    i = 0
    n = len(block)
    while i < n:
        token = block[i]
        i += 1
        lit_len = token >> 4
        if lit_len == 15:
            lit_len, i = _read_extension(block, i, lit_len)
        out.extend(block[i : i + lit_len])
        i += lit_len
        if i >= n:
            break  # final sequence carries no match
        offset = block[i] | (block[i + 1] << 8)
        i += 2
        mlen = (token & 0xF) + _MIN_MATCH
        if (token & 0xF) == 15:
            extra, i = _read_extension(block, i, 0)
            mlen += extra
        start = len(out) - offset
        for k in range(mlen):  # may self-overlap; copy bytewise
            out.append(out[start + k])
    if expected_size is not None and len(out) != expected_size:
        raise ValueError(f"decompressed {len(out)} bytes, expected {expected_size}")
    return bytes(out)


def _read_extension(block: bytes, i: int, base: int) -> tuple[int, int]:
    value = base
    while True:
        b = block[i]
        i += 1
        value += b
        if b != 255:
            return value, i


def lz4_container(data: bytes) -> bytes:
    """Fixed container: magic + uint32 raw length + LZ4 block stream."""
    return _MAGIC + struct.pack("<I", len(data)) + compress_block(data)


def compressed_size(data: bytes) -> int:
    return len(lz4_container(data))
