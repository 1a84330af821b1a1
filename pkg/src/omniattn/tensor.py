"""Dense reference numerics.

Everything here is the ground truth the sparse paths are tested against:
plain matrices, a numerically stable row softmax, the dense attention
oracle, token-wise RMS normalization, rotary encoding, and block mean
pooling. Values are stored as float32; reductions accumulate in float64
and round once, so results are independent of BLAS blocking order.
"""

import numpy as np

from .errors import ParameterError, ShapeError

DTYPE = np.float32

ROPE_BASE = 10000.0


def as_matrix(a, name="matrix", check_finite=True):
    """Validate and convert to a C-contiguous float32 2-D array.

    Rejects non-2-D input and (unless told otherwise) non-finite values;
    placeholder-bearing buffers opt out and check the rows they read.
    """
    m = np.ascontiguousarray(a, dtype=DTYPE)
    if m.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D matrix, got shape {m.shape}")
    if check_finite and not np.isfinite(m).all():
        raise ParameterError(f"{name}: contains NaN or Inf")
    return m


def matmul(a, b):
    """Matrix product with float64 accumulation, rounded to float32."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ ({a.shape} x {b.shape})")
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(DTYPE)


def row_softmax(s):
    """Row-wise softmax with per-row max subtraction for stability."""
    s = as_matrix(s, "scores")
    shifted = s.astype(np.float64) - s.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=1, keepdims=True)).astype(DTYPE)


def dense_attention(q, k, v):
    """Full attention: softmax(q kᵀ / sqrt(d)) v.

    This is the oracle for every sparse-attention equivalence test.
    """
    q = as_matrix(q, "q")
    k = as_matrix(k, "k")
    v = as_matrix(v, "v")
    if not (q.shape[1] == k.shape[1] == v.shape[1]) or k.shape[0] != v.shape[0]:
        raise ShapeError(
            f"attention operands inconsistent: q{q.shape} k{k.shape} v{v.shape}"
        )
    d = q.shape[1]
    scores = (q.astype(np.float64) @ k.astype(np.float64).T) / np.sqrt(d)
    p = row_softmax(scores.astype(DTYPE))
    return matmul(p, v)


def rms_norm(x, weight, eps=1e-6):
    """Token-wise RMS normalization along the last axis.

    y = x * weight / sqrt(mean(x^2) + eps). No cross-token dependence,
    which is what makes row skipping in the query projection legal.
    """
    x = np.asarray(x, dtype=DTYPE)
    weight = np.asarray(weight, dtype=DTYPE)
    if x.shape[-1] != weight.shape[-1]:
        raise ShapeError(f"rms_norm: dim mismatch {x.shape[-1]} vs {weight.shape[-1]}")
    ms = np.mean(np.square(x, dtype=np.float64), axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(ms + eps)
    return (x * weight * inv).astype(DTYPE)


def rope(x, position):
    """Rotary positional encoding: pairwise 2-D rotations, interleaved layout.

    Angle for pair j is position * base^(-2j/d). Accepts a single vector
    with a scalar position or a matrix with one position per row.
    Norm-preserving per pair.
    """
    x = np.asarray(x, dtype=DTYPE)
    d = x.shape[-1]
    if d % 2 != 0:
        raise ShapeError(f"rope: feature dim must be even, got {d}")
    pos = np.asarray(position, dtype=np.float64)
    if x.ndim == 2 and pos.ndim == 0:
        pos = np.broadcast_to(pos, (x.shape[0],))
    if x.ndim == 2 and pos.shape != (x.shape[0],):
        raise ShapeError("rope: need one position per row")
    j = np.arange(d // 2, dtype=np.float64)
    theta = ROPE_BASE ** (-2.0 * j / d)
    angles = pos[..., None] * theta
    c = np.cos(angles).astype(DTYPE)
    s = np.sin(angles).astype(DTYPE)
    even = x[..., 0::2]
    odd = x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * c - odd * s
    out[..., 1::2] = even * s + odd * c
    return out


def mean_pool_blocks(x, pool):
    """Mean-pool consecutive row blocks of size `pool`.

    The trailing partial block is averaged over its actual length, so every
    output row is a convex combination of input rows. Accumulates in
    float64, which makes pool -> replicate -> pool an exact projection.
    """
    x = as_matrix(x, "x")
    if pool < 1:
        raise ParameterError(f"pool must be >= 1, got {pool}")
    n = x.shape[0]
    starts = np.arange(0, n, pool)
    sums = np.add.reduceat(x.astype(np.float64), starts, axis=0)
    counts = (np.minimum(starts + pool, n) - starts).astype(np.float64)
    return (sums / counts[:, None]).astype(DTYPE)
