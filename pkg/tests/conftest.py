import numpy as np
import pytest

from omniattn._kernels import available_backends

BACKEND_NAMES = sorted(available_backends())


@pytest.fixture(params=BACKEND_NAMES)
def backend(request):
    return available_backends()[request.param]


def make_masks(rng, t_q, t_kv, pool_n=1, skip_density=0.6, cache_density=0.7):
    """Random valid block masks: uniform over pool groups, at least one
    computed row, and at least one computed pair per active row."""
    comp_rows = -(-t_q // pool_n)
    comp_cols = -(-t_kv // pool_n)
    comp_cache = rng.random(comp_rows) < cache_density
    if not comp_cache.any():
        comp_cache[int(rng.integers(comp_rows))] = True
    comp_skip = rng.random((comp_rows, comp_cols)) < skip_density
    for r in range(comp_rows):
        if comp_cache[r] and not comp_skip[r].any():
            comp_skip[r, int(rng.integers(comp_cols))] = True
        if not comp_cache[r]:
            comp_skip[r] = False
    cache_bits = np.repeat(comp_cache, pool_n)[:t_q]
    skip_bits = np.repeat(np.repeat(comp_skip, pool_n, 0), pool_n, 1)[:t_q, :t_kv]
    return cache_bits, skip_bits


def masked_oracle(q, k, v, cache_bits, skip_bits, b_q, b_k):
    """Brute-force float64 softmax over exactly the allowed key blocks;
    rows of cached blocks come back NaN."""
    n, d = q.shape
    out = np.full((n, d), np.nan, dtype=np.float32)
    for i in np.flatnonzero(cache_bits):
        r0, r1 = i * b_q, min((i + 1) * b_q, n)
        cols = np.concatenate(
            [
                np.arange(j * b_k, min((j + 1) * b_k, n))
                for j in np.flatnonzero(skip_bits[i])
            ]
        )
        s = q[r0:r1].astype(np.float64) @ k[cols].astype(np.float64).T
        s /= np.sqrt(d)
        s -= s.max(axis=1, keepdims=True)
        e = np.exp(s)
        p = e / e.sum(axis=1, keepdims=True)
        out[r0:r1] = (p @ v[cols].astype(np.float64)).astype(np.float32)
    return out


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-30)


def prefix_oracle(scores, budget, absolute=False):
    """Walk the ascending (value, index) order, taking entries while the
    running sum stays within the threshold: budget itself when absolute,
    otherwise budget times the total."""
    scores = [float(s) for s in scores]
    order = sorted(range(len(scores)), key=lambda i: (scores[i], i))
    total = 0.0
    for i in order:
        total += scores[i]
    threshold = budget if absolute else budget * total
    picked = set()
    csum = 0.0
    for i in order:
        csum += scores[i]
        if csum <= threshold:
            picked.add(i)
        else:
            break
    return picked
