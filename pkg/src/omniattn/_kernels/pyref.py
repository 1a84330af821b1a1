"""Pure-numpy tile kernel: the fallback when the compiled core is absent.

Implements the same contract as _core.masked_block_attention and is the
reference the compiled kernel is benchmarked against.
"""

import numpy as np

from ..errors import ConsistencyError

NAME = "python"


def masked_block_attention(q, k, v, active, pair_bits, b_q, b_k, scale, out):
    """Block-tiled attention with online softmax over unmasked key blocks.

    active: uint8 per query block, 1 = compute this tile.
    pair_bits: uint8 (n_qblocks, n_kblocks), 1 = compute the pair; only
    rows with active==1 are read. Tiles of inactive rows are left
    untouched in `out`. Returns the number of block pairs computed.
    """
    n, d = q.shape
    scale = np.float32(scale)
    pairs = 0
    for i in np.flatnonzero(active):
        r0 = i * b_q
        r1 = min(r0 + b_q, n)
        nr = r1 - r0
        m = np.full(nr, -np.inf, dtype=np.float32)
        l = np.zeros(nr, dtype=np.float32)
        acc = np.zeros((nr, d), dtype=np.float32)
        for j in np.flatnonzero(pair_bits[i]):
            c0 = j * b_k
            c1 = min(c0 + b_k, n)
            scores = (q[r0:r1] @ k[c0:c1].T) * scale
            m_new = np.maximum(m, scores.max(axis=1))
            corr = np.exp(m - m_new)
            p = np.exp(scores - m_new[:, None])
            l = l * corr + p.sum(axis=1)
            acc = acc * corr[:, None] + p @ v[c0:c1]
            m = m_new
            pairs += 1
        if np.any(l <= 0.0):
            raise ConsistencyError(
                f"active query block {i} has every key block skipped"
            )
        out[r0:r1] = acc / l[:, None]
    return pairs
