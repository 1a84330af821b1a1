"""Sparse projections around the attention core.

The query projection skips rows of blocks whose tiles will be reused from
cache — RMS norm and rotary encoding are token-local, so dropping rows is
exact. The output projection runs in two stages at update steps: heads
that will be cached are projected once into a per-block bias stack (one
matrix per difference order), and dispatch steps then forecast that bias
instead of re-projecting cached heads, which is legal because the forecast
is linear and commutes with the projection.
"""

from dataclasses import dataclass

import numpy as np

from .attention import forecast_coefficients
from .errors import ParameterError, ShapeError, StateError
from .symbols import ceil_div, decode_spatial
from .tensor import DTYPE, as_matrix, rms_norm, rope


@dataclass
class GemmCounters:
    """Multiply-accumulate counts for the projection paths.

    `actual` counts output-producing projection MACs only; the extra work
    of building and combining higher-order bias stacks is tracked apart in
    `bias_macs` so actual <= dense always holds.
    """

    q_macs_dense: int = 0
    q_macs_actual: int = 0
    o_macs_dense: int = 0
    o_macs_actual: int = 0
    o_bias_macs: int = 0


def _active_blocks(sym, t_q):
    if sym.rows != t_q:
        raise ShapeError(f"symbols have {sym.rows} rows, expected {t_q}")
    return np.array([decode_spatial(sym, i) for i in range(t_q)], dtype=bool)


def project_q(
    x,
    w_q,
    norm_weight,
    symbols,
    phase,
    *,
    b_q,
    positions=None,
    eps=1e-6,
    counters=None,
    fill=0.0,
):
    """Per-head query projection -> RMS norm -> rotary encoding.

    Update phase projects every row. Dispatch phase computes only rows of
    blocks marked compute in that head's symbols; the remaining rows are
    placeholders holding `fill` (pass NaN to trap illegal reads) and are
    never read downstream.
    """
    x = as_matrix(x, "x")
    w_q = np.asarray(w_q, dtype=DTYPE)
    if phase not in ("update", "dispatch"):
        raise ParameterError(f"unknown phase {phase!r}")
    heads, d_model, d = w_q.shape
    n = x.shape[0]
    if x.shape[1] != d_model:
        raise ShapeError(f"x width {x.shape[1]} != projection input {d_model}")
    if positions is None:
        positions = np.arange(n)
    t_q = ceil_div(n, b_q)
    out = np.full((heads, n, d), fill, dtype=DTYPE)
    for h in range(heads):
        if phase == "update":
            rows = np.arange(n)
        else:
            active = _active_blocks(symbols[h], t_q)
            starts = np.flatnonzero(active) * b_q
            rows = np.concatenate(
                [np.arange(s, min(s + b_q, n)) for s in starts]
            ) if starts.size else np.empty(0, dtype=int)
        if rows.size:
            y = np.ascontiguousarray(x[rows]) @ w_q[h]
            y = rms_norm(y, norm_weight[h], eps)
            y = rope(y, positions[rows])
            out[h, rows] = y
        if counters is not None:
            counters.q_macs_dense += n * d_model * d
            counters.q_macs_actual += int(rows.size) * d_model * d
    return out


@dataclass
class CachedBias:
    """Output-projected contribution of to-be-cached heads, per query block.

    stacks[i][d] = sum over cached heads of that head's d-th difference
    tile projected through its output weights. orders[i] counts populated
    levels; active_heads[i, h] is True when head h stays computed.
    """

    stacks: list
    orders: np.ndarray
    active_heads: np.ndarray


def project_out_update(
    o_heads,
    w_out,
    symbols_next,
    cache,
    order_d,
    *,
    b_q,
    counters=None,
):
    """Update-step output projection, two stages.

    Stage 1 projects the difference stacks of heads the next dispatch
    window will cache, accumulating the per-block bias stacks. Stage 2
    projects the remaining heads and adds the order-0 bias, which already
    carries the cached heads' current outputs — every head is projected
    exactly once. Returns (projected output, CachedBias).
    """
    o_heads = np.asarray(o_heads, dtype=DTYPE)
    w_out = np.asarray(w_out, dtype=DTYPE)
    heads, n, d = o_heads.shape
    d_model = w_out.shape[2]
    t_q = ceil_div(n, b_q)
    active_heads = np.column_stack(
        [_active_blocks(symbols_next[h], t_q) for h in range(heads)]
    )

    stacks = []
    orders = np.zeros(t_q, dtype=int)
    out = np.zeros((n, d_model), dtype=DTYPE)
    for i in range(t_q):
        r0 = i * b_q
        r1 = min(r0 + b_q, n)
        nr = r1 - r0
        cached_heads = np.flatnonzero(~active_heads[i])
        if cached_heads.size:
            n_orders = min(
                order_d + 1,
                min(cache.valid_orders(h, i) for h in cached_heads),
            )
            if n_orders < 1:
                raise StateError(
                    f"block {i}: a to-be-cached head has a cold cache"
                )
            stack = np.zeros((n_orders, nr, d_model), dtype=DTYPE)
            for h in cached_heads:
                entry = cache.entry(h, i)
                for dd in range(n_orders):
                    stack[dd] += entry.diff_stack[dd] @ w_out[h]
            stacks.append(stack)
            orders[i] = n_orders
            out[r0:r1] += stack[0]
            if counters is not None:
                counters.o_macs_actual += cached_heads.size * nr * d * d_model
                counters.o_bias_macs += (
                    cached_heads.size * (n_orders - 1) * nr * d * d_model
                )
        else:
            stacks.append(np.zeros((0, nr, d_model), dtype=DTYPE))
        for h in np.flatnonzero(active_heads[i]):
            out[r0:r1] += o_heads[h, r0:r1] @ w_out[h]
            if counters is not None:
                counters.o_macs_actual += nr * d * d_model
    if counters is not None:
        counters.o_macs_dense += heads * n * d * d_model
    return out, CachedBias(stacks=stacks, orders=orders, active_heads=active_heads)


def project_out_dispatch(
    o_heads,
    w_out,
    symbols,
    bias,
    elapsed_k,
    interval_n,
    order_d,
    *,
    b_q,
    counters=None,
):
    """Dispatch-step output projection.

    Per block: project the heads computed this step, then add the forecast
    of the cached-head bias stacks. Blocks with every head cached perform
    zero projection multiplies.
    """
    o_heads = np.asarray(o_heads, dtype=DTYPE)
    w_out = np.asarray(w_out, dtype=DTYPE)
    heads, n, d = o_heads.shape
    d_model = w_out.shape[2]
    t_q = ceil_div(n, b_q)
    if bias is None:
        raise StateError("dispatch projection requires the update-step bias")
    if interval_n < 1 or not 1 <= elapsed_k <= interval_n - 1:
        raise ParameterError(f"elapsed_k={elapsed_k} outside [1, {interval_n - 1}]")
    active_heads = np.column_stack(
        [_active_blocks(symbols[h], t_q) for h in range(heads)]
    )
    if not np.array_equal(active_heads, bias.active_heads):
        raise StateError("bias was generated under different cache symbols")

    out = np.zeros((n, d_model), dtype=DTYPE)
    for i in range(t_q):
        r0 = i * b_q
        r1 = min(r0 + b_q, n)
        nr = r1 - r0
        for h in np.flatnonzero(active_heads[i]):
            out[r0:r1] += o_heads[h, r0:r1] @ w_out[h]
            if counters is not None:
                counters.o_macs_actual += nr * d * d_model
        if bias.orders[i]:
            n_orders = min(order_d + 1, int(bias.orders[i]))
            coeffs = forecast_coefficients(elapsed_k, interval_n, n_orders)
            for dd in range(n_orders):
                out[r0:r1] += coeffs[dd] * bias.stacks[i][dd]
            if counters is not None:
                counters.o_bias_macs += n_orders * nr * d_model
    if counters is not None:
        counters.o_macs_dense += heads * n * d * d_model
    return out
