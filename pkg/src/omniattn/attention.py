"""Sparse attention engine.

One call processes one head. Each query block takes one of two paths,
chosen by its cache symbol bit: compute-on-demand runs the tiled online
softmax over the key blocks its skip row allows, while cache-then-reuse
forecasts the tile from stored finite differences (or skips it entirely in
bias mode, where the output projection covers cached tiles).
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConsistencyError, ParameterError, ShapeError, StateError
from .symbols import ceil_div, decode_run, decode_spatial
from .tensor import DTYPE, as_matrix


@dataclass
class OnlineSoftmaxState:
    """Running max, normalizer, and unnormalized accumulator per query row."""

    m: np.ndarray
    l: np.ndarray
    acc: np.ndarray

    @classmethod
    def fresh(cls, rows, d):
        return cls(
            m=np.full(rows, -np.inf, dtype=DTYPE),
            l=np.zeros(rows, dtype=DTYPE),
            acc=np.zeros((rows, d), dtype=DTYPE),
        )


def online_softmax_update(state, scores, v_block):
    """Fold one score block into the running softmax state."""
    scores = np.asarray(scores, dtype=DTYPE)
    m_new = np.maximum(state.m, scores.max(axis=1))
    corr = np.exp(state.m - m_new)
    p = np.exp(scores - m_new[:, None])
    return OnlineSoftmaxState(
        m=m_new,
        l=state.l * corr + p.sum(axis=1),
        acc=state.acc * corr[:, None] + p @ np.asarray(v_block, dtype=DTYPE),
    )


def online_softmax_finalize(state):
    """Normalize the accumulator: diag(l)^-1 acc."""
    if np.any(state.l <= 0.0):
        raise ConsistencyError("softmax state finalized with an empty row")
    return state.acc / state.l[:, None]


@dataclass
class CacheEntry:
    """Stored tile output plus its backward finite differences.

    diff_stack[0] is the most recent output; diff_stack[d] the d-th
    backward difference across consecutive updates. valid_orders counts
    how many levels hold real history.
    """

    diff_stack: np.ndarray
    valid_orders: int = 0


def update_entry(entry, o_new, order):
    """Push a fresh tile output, shifting differences one level deeper."""
    o_new = as_matrix(o_new, "tile")
    stack = np.zeros((order + 1,) + o_new.shape, dtype=DTYPE)
    stack[0] = o_new
    if entry is None:
        return CacheEntry(diff_stack=stack, valid_orders=1)
    if entry.diff_stack.shape[1:] != o_new.shape:
        raise ShapeError(
            f"tile shape {o_new.shape} != cached {entry.diff_stack.shape[1:]}"
        )
    valid = min(entry.valid_orders + 1, order + 1)
    for d in range(1, valid):
        stack[d] = stack[d - 1] - entry.diff_stack[d - 1]
    return CacheEntry(diff_stack=stack, valid_orders=valid)


def forecast_coefficients(elapsed_k, interval_n, n_orders):
    """Scalar weights for combining difference levels: (k/N)^d / d!."""
    x = elapsed_k / interval_n
    return np.array(
        [x**d / math.factorial(d) for d in range(n_orders)], dtype=DTYPE
    )


def forecast(entry, elapsed_k, interval_n, order_d):
    """Extrapolate a cached tile elapsed_k steps past its last update.

    Strictly linear in the stored stack levels; exact for trajectories
    affine in step index once two updates are in (order >= 1).
    """
    if entry is None or entry.valid_orders < 1:
        raise StateError("forecast requested from a cold cache entry")
    if interval_n < 1 or not 1 <= elapsed_k <= interval_n - 1:
        raise ParameterError(
            f"elapsed_k={elapsed_k} outside [1, {interval_n - 1}]"
        )
    n_orders = min(order_d + 1, entry.valid_orders)
    coeffs = forecast_coefficients(elapsed_k, interval_n, n_orders)
    out = coeffs[0] * entry.diff_stack[0]
    for d in range(1, n_orders):
        out += coeffs[d] * entry.diff_stack[d]
    return out


class FeatureCache:
    """Per (head, query block) forecast state for one attention layer."""

    def __init__(self, heads, n_blocks, order):
        self.heads = heads
        self.n_blocks = n_blocks
        self.order = order
        self._entries = [[None] * n_blocks for _ in range(heads)]

    def entry(self, head, block):
        return self._entries[head][block]

    def update(self, head, block, o_new):
        self._entries[head][block] = update_entry(
            self._entries[head][block], o_new, self.order
        )

    def valid_orders(self, head, block):
        e = self._entries[head][block]
        return 0 if e is None else e.valid_orders


@dataclass
class AttnCounters:
    """Instrumentation for one attention call."""

    pairs_total: int = 0
    pairs_computed: int = 0

    @property
    def pairs_skipped(self):
        return self.pairs_total - self.pairs_computed


def sparse_attention(
    q,
    k,
    v,
    symbols,
    cache,
    head,
    elapsed_k,
    interval_n,
    order_d,
    *,
    b_q,
    b_k,
    mode="materialize",
    counters=None,
    backend=None,
    fill=0.0,
):
    """Symbol-guided attention for one head.

    mode="materialize" writes forecast tiles for cached blocks into the
    output; mode="bias" leaves them at `fill` — the cached-bias output
    projection accounts for them, so no arithmetic is spent here.
    """
    # q rows of cached blocks may be unwritten placeholders; only the rows
    # of active blocks are read, so only those are checked
    q = as_matrix(q, "q", check_finite=False)
    k = as_matrix(k, "k")
    v = as_matrix(v, "v")
    if mode not in ("materialize", "bias"):
        raise ParameterError(f"unknown mode {mode!r}")
    n, d = q.shape
    t_q = ceil_div(n, b_q)
    t_kv = ceil_div(n, b_k)
    if (symbols.rows, symbols.cols) != (t_q, t_kv):
        raise ShapeError(
            f"symbols dimensioned {symbols.rows}x{symbols.cols}, "
            f"expected {t_q}x{t_kv}"
        )
    kernel = backend if backend is not None else _kernels.get_backend()

    active = np.empty(t_q, dtype=np.uint8)
    for i in range(t_q):
        active[i] = decode_spatial(symbols, i)
    read_rows = np.repeat(active.astype(bool), b_q)[:n]
    if not np.isfinite(q[read_rows]).all():
        raise ParameterError("q: active-block rows contain NaN or Inf")
    pair_bits = np.zeros((t_q, t_kv), dtype=np.uint8)
    for i in np.flatnonzero(active):
        # one run decode per row, consumed across the whole inner loop
        pair_bits[i] = decode_run(symbols, i // symbols.pool_n)

    out = np.full((n, d), fill, dtype=DTYPE)
    scale = 1.0 / math.sqrt(d)
    pairs = kernel.masked_block_attention(
        q, k, v, active, pair_bits, b_q, b_k, scale, out
    )

    for i in np.flatnonzero(active == 0):
        entry = cache.entry(head, i) if cache is not None else None
        if entry is None or entry.valid_orders < 1:
            raise StateError(f"query block {i} is cached but the cache is cold")
        if mode == "materialize":
            r0 = i * b_q
            out[r0 : r0 + entry.diff_stack.shape[1]] = forecast(
                entry, elapsed_k, interval_n, order_d
            )

    if counters is not None:
        counters.pairs_total += t_q * t_kv
        counters.pairs_computed += pairs
    return out
