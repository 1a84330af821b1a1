"""Compact sparse symbols: byte-packed block masks and their bitwise decoders.

Two logical masks drive the engine. The cache mask is one bit per query
block (1 = compute, 0 = reuse cached output). The skip mask is one bit per
(query block, key block) pair (1 = compute, 0 = skip). Masks are produced
at a compressed granularity — every group of `pool_n` consecutive blocks
shares one decision — and stored one bit per compressed group, MSB-first
within each byte, zero-padded at the tail. Each compressed skip-mask row
starts on a byte boundary so a full row can be decoded with one contiguous
read.

Example: compressed cache bits [1,1,1,0,0] pack to the single byte
0b11100000 == 224.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, ConsistencyError, ShapeError

SYMBOL_FORMAT_VERSION = 1

_HEADER = struct.Struct("<4I")


def ceil_div(a, b):
    return -(-a // b)


def _as_bits(bits, ndim, name):
    arr = np.asarray(bits)
    if arr.ndim != ndim:
        raise ShapeError(f"{name}: expected {ndim}-D bit array, got shape {arr.shape}")
    return arr.astype(bool)


def _compress_groups(bits, pool_n):
    """Collapse groups of pool_n consecutive bits into one bit each.

    Every group must be uniform: the masks are generated at compressed
    granularity, so a mixed group means a policy bug upstream.
    """
    n = bits.shape[-1]
    starts = np.arange(0, n, pool_n)
    lo = np.minimum.reduceat(bits, starts, axis=-1)
    hi = np.maximum.reduceat(bits, starts, axis=-1)
    if not np.array_equal(lo, hi):
        raise ConsistencyError(
            f"mask not uniform over pool groups of {pool_n} blocks"
        )
    return hi


def _pack_row(comp):
    """Pack a 1-D bit row MSB-first, zero-padding the final byte."""
    out = bytearray(ceil_div(comp.size, 8))
    for idx, bit in enumerate(comp):
        if bit:
            out[idx >> 3] |= 0x80 >> (idx & 7)
    return bytes(out)


def encode_cache_mask(bits, pool_n):
    """Pack a per-query-block cache mask into compressed symbol bytes."""
    if pool_n < 1:
        raise ConsistencyError(f"pool_n must be >= 1, got {pool_n}")
    bits = _as_bits(bits, 1, "cache mask")
    return _pack_row(_compress_groups(bits, pool_n))


def encode_skip_mask(bits, pool_n):
    """Pack a (query block x key block) skip mask, one byte-aligned row per
    compressed query row."""
    if pool_n < 1:
        raise ConsistencyError(f"pool_n must be >= 1, got {pool_n}")
    bits = _as_bits(bits, 2, "skip mask")
    comp_cols = _compress_groups(bits, pool_n)
    comp = _compress_groups(comp_cols.T, pool_n).T
    return b"".join(_pack_row(row) for row in comp)


@dataclass(frozen=True)
class SymbolBuffer:
    """Byte-packed cache/skip symbols for one attention head.

    rows/cols count logical blocks (query/key); pool_n is the compressed
    grouping factor the bits were generated at.
    """

    s_c: bytes
    s_s: bytes
    rows: int
    cols: int
    pool_n: int

    def __post_init__(self):
        if len(self.s_c) != ceil_div(self.comp_rows, 8):
            raise ConsistencyError(
                f"s_c length {len(self.s_c)} != expected {ceil_div(self.comp_rows, 8)}"
            )
        if len(self.s_s) != self.comp_rows * self.row_stride:
            raise ConsistencyError(
                f"s_s length {len(self.s_s)} != expected "
                f"{self.comp_rows * self.row_stride}"
            )

    @property
    def comp_rows(self):
        return ceil_div(self.rows, self.pool_n)

    @property
    def comp_cols(self):
        return ceil_div(self.cols, self.pool_n)

    @property
    def row_stride(self):
        """Bytes per compressed skip-mask row."""
        return ceil_div(self.comp_cols, 8)

    def to_bytes(self):
        """Serialize: 16-byte little-endian header (rows, cols, pool_n,
        version) followed by the raw s_c and s_s bytes."""
        header = _HEADER.pack(self.rows, self.cols, self.pool_n, SYMBOL_FORMAT_VERSION)
        return header + self.s_c + self.s_s

    @classmethod
    def from_bytes(cls, data):
        if len(data) < _HEADER.size:
            raise ConsistencyError("symbol blob shorter than header")
        rows, cols, pool_n, version = _HEADER.unpack_from(data)
        if version != SYMBOL_FORMAT_VERSION:
            raise ConsistencyError(f"unsupported symbol format version {version}")
        comp_rows = ceil_div(rows, pool_n)
        n_c = ceil_div(comp_rows, 8)
        n_s = comp_rows * ceil_div(ceil_div(cols, pool_n), 8)
        if len(data) != _HEADER.size + n_c + n_s:
            raise ConsistencyError("symbol blob length inconsistent with header")
        s_c = data[_HEADER.size : _HEADER.size + n_c]
        s_s = data[_HEADER.size + n_c :]
        return cls(s_c=s_c, s_s=s_s, rows=rows, cols=cols, pool_n=pool_n)


def build_symbols(cache_bits, skip_bits, pool_n):
    """Encode a (cache mask, skip mask) pair into a SymbolBuffer."""
    cache_bits = _as_bits(cache_bits, 1, "cache mask")
    skip_bits = _as_bits(skip_bits, 2, "skip mask")
    if skip_bits.shape[0] != cache_bits.shape[0]:
        raise ShapeError(
            f"skip mask has {skip_bits.shape[0]} rows, cache mask has "
            f"{cache_bits.shape[0]}"
        )
    return SymbolBuffer(
        s_c=encode_cache_mask(cache_bits, pool_n),
        s_s=encode_skip_mask(skip_bits, pool_n),
        rows=cache_bits.shape[0],
        cols=skip_bits.shape[1],
        pool_n=pool_n,
    )


def decode_spatial(buf, i):
    """Cache bit for query block i: 1 = compute the tile, 0 = reuse cache."""
    if not 0 <= i < buf.rows:
        raise BoundsError(f"block index {i} out of range [0, {buf.rows})")
    c = i // buf.pool_n
    return (buf.s_c[c >> 3] >> (7 - (c & 7))) & 1


def decode_reduction(buf, i, j):
    """Skip bit for the (query block i, key block j) pair: 1 = compute."""
    if not 0 <= i < buf.rows:
        raise BoundsError(f"query block {i} out of range [0, {buf.rows})")
    if not 0 <= j < buf.cols:
        raise BoundsError(f"key block {j} out of range [0, {buf.cols})")
    ci = i // buf.pool_n
    cj = j // buf.pool_n
    byte = buf.s_s[ci * buf.row_stride + (cj >> 3)]
    return (byte >> (7 - (cj & 7))) & 1


def decode_run(buf, comp_row):
    """Decode one full compressed skip-mask row into per-block bits.

    Each compressed bit is replicated pool_n times and the result truncated
    to `cols` entries. The attention engine calls this once per query row
    before its inner loop instead of issuing a per-pair decode_reduction.
    """
    if not 0 <= comp_row < buf.comp_rows:
        raise BoundsError(
            f"compressed row {comp_row} out of range [0, {buf.comp_rows})"
        )
    raw = np.frombuffer(
        buf.s_s, dtype=np.uint8, count=buf.row_stride, offset=comp_row * buf.row_stride
    )
    bits = ((raw[:, None] >> (7 - np.arange(8))) & 1).reshape(-1)[: buf.comp_cols]
    return np.repeat(bits, buf.pool_n)[: buf.cols].astype(np.uint8)
