"""Mask generation at update steps.

A pooled attention map over compressed blocks yields two per-vision-block
scores: how much a vision block feeds the text rows (contribution) and how
much text guides it (guidance). Blocks low on both scores are cached;
within each computed row, the lowest-mass key blocks are skipped up to a
cumulative budget. Text blocks are never cached, and by default text key
columns and the diagonal block are never skipped either — dropping the
cross-modal pairs defeats the purpose of the guidance metric.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .symbols import ceil_div
from .tensor import as_matrix, mean_pool_blocks, row_softmax


@dataclass(frozen=True)
class CompressedAttnMap:
    """Row-stochastic attention map over compressed blocks.

    n_t is the number of leading compressed blocks that contain text tokens.
    """

    p_tilde: np.ndarray
    n_t: int

    def __post_init__(self):
        if self.p_tilde.ndim != 2:
            raise ShapeError(f"compressed map must be 2-D, got {self.p_tilde.shape}")
        if not 0 <= self.n_t < self.p_tilde.shape[0]:
            raise ParameterError(
                f"n_t={self.n_t} must leave at least one vision row "
                f"(map has {self.p_tilde.shape[0]} rows)"
            )
        sums = self.p_tilde.sum(axis=1)
        if not np.allclose(sums, 1.0, atol=1e-5):
            raise ParameterError("compressed map rows must each sum to 1")


def compressed_attention(q, k, pool_q, pool_k, n_text):
    """Pool q/k rows into compressed tokens and softmax their score map."""
    q = as_matrix(q, "q")
    k = as_matrix(k, "k")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"q/k feature dims differ: {q.shape[1]} vs {k.shape[1]}")
    pooled_q = mean_pool_blocks(q, pool_q)
    pooled_k = mean_pool_blocks(k, pool_k)
    d = q.shape[1]
    scores = (pooled_q.astype(np.float64) @ pooled_k.astype(np.float64).T) / np.sqrt(d)
    p = row_softmax(scores.astype(np.float32))
    return CompressedAttnMap(p_tilde=p, n_t=ceil_div(n_text, pool_q))


def vision_to_text_contribution(m):
    """Per vision block: total mass text rows place on it.

    Column sums of the text-row / vision-column sub-block. Lower values
    mean the block barely informs the text stream, so it is a better
    caching candidate.
    """
    return np.asarray(m.p_tilde[: m.n_t, m.n_t :].sum(axis=0), dtype=np.float64)


def text_to_vision_guidance(m):
    """Per vision block: how strongly text steers it.

    The vision-row / text-column sub-block is transposed and re-softmaxed
    so each text row distributes one unit of mass over vision blocks; the
    column sums then total n_t.
    """
    sub = m.p_tilde[m.n_t :, : m.n_t].T
    beta = row_softmax(np.ascontiguousarray(sub))
    return np.asarray(beta.sum(axis=0), dtype=np.float64)


def ascending_budget_prefix(scores, budget):
    """Boolean mask of the maximal ascending-score prefix whose cumulative
    sum stays within budget * total. Ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(scores, kind="stable")
    csum = np.cumsum(scores[order])
    total = csum[-1] if csum.size else 0.0
    take = csum <= budget * total
    selected = np.zeros(scores.shape[0], dtype=bool)
    selected[order[take]] = True
    return selected


def select_cached_blocks(contribution, guidance, tau_q):
    """Vision blocks cached for the next dispatch window.

    A block is cached iff it sits in both low-score prefixes: ascending
    cumulative contribution within tau_q of its total, and the same for
    guidance. Returns True = cached, over vision blocks only.
    """
    contribution = np.asarray(contribution, dtype=np.float64)
    guidance = np.asarray(guidance, dtype=np.float64)
    if contribution.shape != guidance.shape:
        raise ShapeError(
            f"score vectors differ: {contribution.shape} vs {guidance.shape}"
        )
    if not 0.0 <= tau_q <= 1.0:
        raise ParameterError(f"tau_q must be in [0, 1], got {tau_q}")
    return ascending_budget_prefix(contribution, tau_q) & ascending_budget_prefix(
        guidance, tau_q
    )


def ascending_budget_prefix_abs(scores, budget):
    """Like ascending_budget_prefix, but against an absolute mass budget."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(scores, kind="stable")
    csum = np.cumsum(scores[order])
    take = csum <= budget
    selected = np.zeros(scores.shape[0], dtype=bool)
    selected[order[take]] = True
    return selected


def select_skip_blocks(m, cache_bits, tau_kv, guard=True):
    """Per computed row, skip the lowest-mass key blocks within tau_kv.

    cache_bits: compressed-granularity compute bits (True = row computed).
    With guard on, text key columns and the diagonal block are exempt from
    skipping. Rows that are cached get an all-zero row (never read).
    Returns the compressed skip mask, True = compute the pair.
    """
    if not 0.0 <= tau_kv <= 1.0:
        raise ParameterError(f"tau_kv must be in [0, 1], got {tau_kv}")
    p = m.p_tilde
    rows, cols = p.shape
    cache_bits = np.asarray(cache_bits, dtype=bool)
    if cache_bits.shape != (rows,):
        raise ShapeError(f"cache bits shape {cache_bits.shape} != ({rows},)")
    keep = np.zeros((rows, cols), dtype=bool)
    for r in range(rows):
        if not cache_bits[r]:
            continue
        protected = np.zeros(cols, dtype=bool)
        if guard:
            protected[: m.n_t] = True
            if r < cols:
                protected[r] = True
        cand = np.flatnonzero(~protected)
        row = np.zeros(cols, dtype=bool)
        row[protected] = True
        if cand.size:
            skip = ascending_budget_prefix_abs(p[r, cand].astype(np.float64), tau_kv)
            if not protected.any() and skip.all():
                # an active row must keep at least one pair: spare the
                # highest-mass candidate
                skip[np.argmax(p[r, cand])] = False
            row[cand[~skip]] = True
        keep[r] = row
    return keep


def degrade_to_full_cache(cache_bits, n_t, s_q):
    """Fall back to whole-feature caching when too little would be computed.

    If the computed fraction of vision blocks drops below s_q, cache them
    all (text blocks stay computed); otherwise return the mask unchanged.
    """
    if not 0.0 <= s_q <= 1.0:
        raise ParameterError(f"s_q must be in [0, 1], got {s_q}")
    cache_bits = np.asarray(cache_bits, dtype=bool)
    vision = cache_bits[n_t:]
    if vision.size == 0:
        return cache_bits
    if vision.mean() < s_q:
        out = cache_bits.copy()
        out[n_t:] = False
        return out
    return cache_bits


def ramp_threshold(tau_target, step, warmup_steps):
    """Linear warmup from 0 to the target threshold over warmup_steps."""
    if step < 0:
        raise ParameterError(f"step must be >= 0, got {step}")
    if warmup_steps <= 0:
        return tau_target
    return tau_target * min(1.0, step / warmup_steps)


def expand_blocks(comp_bits, pool_n, n):
    """Replicate compressed decisions pool_n times, truncated to n blocks."""
    comp_bits = np.asarray(comp_bits)
    return np.repeat(comp_bits, pool_n, axis=0)[:n]


def generate_masks(
    q,
    k,
    *,
    b_q,
    b_k,
    pool_n,
    n_text,
    tau_q,
    tau_kv,
    s_q=0.0,
    guard=True,
):
    """Full per-head policy: pooled map -> scores -> cache/skip masks.

    Returns block-granularity (cache_bits, skip_bits), both with True =
    compute. Thresholds are taken as given; apply ramp_threshold upstream.
    """
    n = q.shape[0]
    m = compressed_attention(q, k, pool_n * b_q, pool_n * b_k, n_text)
    rows, cols = m.p_tilde.shape
    if rows != cols:
        raise ParameterError(
            f"cache selection needs a square compressed map, got {rows}x{cols}; "
            "choose b_q/b_k so query and key grids align"
        )
    contribution = vision_to_text_contribution(m)
    guidance = text_to_vision_guidance(m)
    cached = select_cached_blocks(contribution, guidance, tau_q)
    comp_cache = np.ones(rows, dtype=bool)
    comp_cache[m.n_t :] = ~cached
    comp_cache = degrade_to_full_cache(comp_cache, m.n_t, s_q)
    comp_skip = select_skip_blocks(m, comp_cache, tau_kv, guard=guard)
    t_q = ceil_div(n, b_q)
    t_kv = ceil_div(n, b_k)
    cache_bits = expand_blocks(comp_cache, pool_n, t_q)
    skip_bits = expand_blocks(comp_skip, pool_n, t_q)
    skip_bits = np.repeat(skip_bits, pool_n, axis=1)[:, :t_kv]
    return cache_bits, skip_bits
