# Compiled tile kernel: block-tiled attention with online softmax and
# per-pair mask skipping. Mirrors pyref.masked_block_attention; see that
# module for the contract.

import numpy as np

from libc.math cimport INFINITY, expf

from omniattn.errors import ConsistencyError

NAME = "compiled"


def masked_block_attention(
    const float[:, ::1] q,
    const float[:, ::1] k,
    const float[:, ::1] v,
    const unsigned char[::1] active,
    const unsigned char[:, ::1] pair_bits,
    Py_ssize_t b_q,
    Py_ssize_t b_k,
    float scale,
    float[:, ::1] out,
):
    cdef Py_ssize_t n = q.shape[0]
    cdef Py_ssize_t d = q.shape[1]
    cdef Py_ssize_t t_q = active.shape[0]
    cdef Py_ssize_t t_kv = pair_bits.shape[1]
    cdef Py_ssize_t pairs = 0

    scratch_m = np.empty(b_q, dtype=np.float32)
    scratch_l = np.empty(b_q, dtype=np.float32)
    scratch_acc = np.empty((b_q, d), dtype=np.float32)
    scratch_p = np.empty((b_q, b_k), dtype=np.float32)
    cdef float[::1] m = scratch_m
    cdef float[::1] l = scratch_l
    cdef float[:, ::1] acc = scratch_acc
    cdef float[:, ::1] p = scratch_p

    cdef Py_ssize_t i, j, r, c, f, r0, r1, c0, c1, nr, nc
    cdef float s, row_max, m_new, corr, e, pv
    cdef bint dead

    for i in range(t_q):
        if not active[i]:
            continue
        r0 = i * b_q
        r1 = r0 + b_q
        if r1 > n:
            r1 = n
        nr = r1 - r0
        for r in range(nr):
            m[r] = -INFINITY
            l[r] = 0.0
            for f in range(d):
                acc[r, f] = 0.0
        for j in range(t_kv):
            if not pair_bits[i, j]:
                continue
            c0 = j * b_k
            c1 = c0 + b_k
            if c1 > n:
                c1 = n
            nc = c1 - c0
            pairs += 1
            for r in range(nr):
                row_max = -INFINITY
                for c in range(nc):
                    s = 0.0
                    for f in range(d):
                        s += q[r0 + r, f] * k[c0 + c, f]
                    s *= scale
                    p[r, c] = s
                    if s > row_max:
                        row_max = s
                m_new = m[r] if m[r] > row_max else row_max
                corr = expf(m[r] - m_new)
                m[r] = m_new
                l[r] *= corr
                for f in range(d):
                    acc[r, f] *= corr
                for c in range(nc):
                    e = expf(p[r, c] - m_new)
                    l[r] += e
                    p[r, c] = e
                for c in range(nc):
                    pv = p[r, c]
                    for f in range(d):
                        acc[r, f] += pv * v[c0 + c, f]
        dead = False
        for r in range(nr):
            if l[r] <= 0.0:
                dead = True
            else:
                for f in range(d):
                    out[r0 + r, f] = acc[r, f] / l[r]
        if dead:
            raise ConsistencyError(
                f"active query block {i} has every key block skipped"
            )
    return pairs
