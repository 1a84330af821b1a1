"""Acceptance suite: one test per criterion, each printing a PASS line
with its measured runtime (run with -s to see them)."""

import time

import numpy as np

from omniattn.attention import (
    AttnCounters,
    FeatureCache,
    forecast,
    sparse_attention,
    update_entry,
)
from omniattn.cli import main
from omniattn.costs import theoretical_speedup_gemm_o
from omniattn.gemm import project_out_dispatch, project_out_update
from omniattn.pipeline import (
    EngineConfig,
    LayerState,
    StepCost,
    dense_reference,
    dispatch_step,
    max_rel_error,
    run,
    synthetic_workload,
    update_step,
)
from omniattn.policy import CompressedAttnMap, select_cached_blocks, select_skip_blocks
from omniattn.symbols import build_symbols, decode_reduction, decode_spatial, encode_cache_mask
from omniattn.tensor import dense_attention

from conftest import make_masks, masked_oracle, prefix_oracle, rel_err
from test_cli import DEFAULT_CONFIG


class _Budget:
    def __init__(self, name, seconds):
        self.name = name
        self.seconds = seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, *rest):
        elapsed = time.perf_counter() - self.start
        if exc_type is None:
            assert elapsed < self.seconds, (
                f"{self.name}: {elapsed:.1f}s exceeds {self.seconds}s budget"
            )
            print(f"ACCEPTANCE PASS {self.name} ({elapsed:.2f}s)")
        return False


def test_criterion_01_speedup_formula():
    with _Budget("1 speedup-formula", 1.0):
        assert theoretical_speedup_gemm_o(6, 0.9) == 4.0
        for interval in (4, 6, 8):
            prev = 0.0
            for s in [round(0.1 * i, 1) for i in range(1, 10)]:
                v = theoretical_speedup_gemm_o(interval, s)
                assert prev < v <= interval
                prev = v


def test_criterion_02_symbol_codec():
    with _Budget("2 symbol-codec", 5.0):
        assert encode_cache_mask(np.array([1, 1, 1, 0, 0], bool), 1) == bytes([224])
        # exhaustive roundtrip over every mask up to 16 bits
        for n in range(1, 17):
            values = np.arange(2**n, dtype=np.uint32)
            bits = (values[:, None] >> (n - 1 - np.arange(n))) & 1
            for value, row in zip(values, bits.astype(bool)):
                raw = encode_cache_mask(row, 1)
                decoded = [(raw[c >> 3] >> (7 - (c & 7))) & 1 for c in range(n)]
                assert decoded == row.astype(int).tolist(), f"mask {value:0{n}b}"
        # random masks up to 64x64 through the full buffer machinery
        rng = np.random.default_rng(2024)
        for _ in range(40):
            pool_n = int(rng.choice([1, 2, 4]))
            t_q = int(rng.integers(1, 65))
            t_kv = int(rng.integers(1, 65))
            cache_bits, skip_bits = make_masks(rng, t_q, t_kv, pool_n)
            sym = build_symbols(cache_bits, skip_bits, pool_n)
            for i in range(t_q):
                assert decode_spatial(sym, i) == cache_bits[i]
                for j in range(t_kv):
                    assert decode_reduction(sym, i, j) == skip_bits[i, j]


def test_criterion_03_dense_equivalence():
    with _Budget("3 dense-equivalence", 30.0):
        rng = np.random.default_rng(3)
        b = 16
        for n in (32, 64, 128):
            t_q = n // b
            sym = build_symbols(np.ones(t_q, bool), np.ones((t_q, t_q), bool), 1)
            for d in (8, 16, 64):
                for heads in (2, 4):
                    for _seed in range(100):
                        for _h in range(heads):
                            q = rng.standard_normal((n, d)).astype(np.float32)
                            k = rng.standard_normal((n, d)).astype(np.float32)
                            v = rng.standard_normal((n, d)).astype(np.float32)
                            got = sparse_attention(
                                q, k, v, sym, None, 0, 0, 1, 0, b_q=b, b_k=b
                            )
                            assert rel_err(got, dense_attention(q, k, v)) < 1e-5


def test_criterion_04_masked_oracle():
    with _Budget("4 masked-oracle", 60.0):
        rng = np.random.default_rng(4)
        for case in range(200):
            b_q = int(rng.choice([8, 16]))
            b_k = int(rng.choice([8, 16]))
            t_q = int(rng.integers(2, 9))
            t_kv = int(rng.integers(2, 9))
            n = max(t_q * b_q, t_kv * b_k) - int(rng.integers(0, min(b_q, b_k)))
            t_q = -(-n // b_q)
            t_kv = -(-n // b_k)
            d = int(rng.choice([8, 16]))
            pool_n = int(rng.choice([1, 2]))
            q = rng.standard_normal((n, d)).astype(np.float32)
            k = rng.standard_normal((n, d)).astype(np.float32)
            v = rng.standard_normal((n, d)).astype(np.float32)
            cache_bits, skip_bits = make_masks(rng, t_q, t_kv, pool_n)
            sym = build_symbols(cache_bits, skip_bits, pool_n)
            cache = FeatureCache(1, t_q, 0)
            for i in range(t_q):
                cache.update(0, i, v[i * b_q : min((i + 1) * b_q, n)])
            ac = AttnCounters()
            got = sparse_attention(
                q, k, v, sym, cache, 0, 1, 2, 0, b_q=b_q, b_k=b_k,
                mode="bias", fill=np.nan, counters=ac,
            )
            want = masked_oracle(q, k, v, cache_bits, skip_bits, b_q, b_k)
            rows = np.repeat(cache_bits, b_q)[:n]
            assert rel_err(got[rows], want[rows]) < 1e-5, f"case {case}"
            assert ac.pairs_computed == int(skip_bits[cache_bits].sum())
            assert ac.pairs_skipped == t_q * t_kv - int(skip_bits[cache_bits].sum())


def test_criterion_05_cached_bias_equivalence():
    with _Budget("5 cached-bias", 30.0):
        rng = np.random.default_rng(5)
        n, d, dm, b_q = 32, 8, 24, 8
        t_q = n // b_q
        interval = 5
        for order in (0, 1, 2):
            for heads in (2, 4, 8):
                w_out = (rng.standard_normal((heads, d, dm)) * d**-0.5).astype(
                    np.float32
                )
                cache = FeatureCache(heads, t_q, order)
                for _ in range(order + 1):
                    o_u = rng.standard_normal((heads, n, d)).astype(np.float32)
                    for h in range(heads):
                        for i in range(t_q):
                            cache.update(h, i, o_u[h, i * b_q : (i + 1) * b_q])
                o = rng.standard_normal((heads, n, d)).astype(np.float32)
                for _ in range(100):
                    active = rng.random((t_q, heads)) < 0.5
                    syms = [
                        build_symbols(
                            active[:, h], np.ones((t_q, t_q), bool), 1
                        )
                        for h in range(heads)
                    ]
                    _, bias = project_out_update(
                        o, w_out, syms, cache, order, b_q=b_q
                    )
                    elapsed = 1 + int(rng.integers(interval - 1))
                    got = project_out_dispatch(
                        o, w_out, syms, bias, elapsed, interval, order, b_q=b_q
                    )
                    full = o.astype(np.float64).copy()
                    for h in range(heads):
                        for i in range(t_q):
                            if not active[i, h]:
                                r = slice(i * b_q, (i + 1) * b_q)
                                full[h, r] = forecast(
                                    cache.entry(h, i), elapsed, interval, order
                                ).astype(np.float64)
                    ref = sum(
                        full[h] @ w_out[h].astype(np.float64)
                        for h in range(heads)
                    )
                    assert rel_err(got, ref) < 1e-4


def test_criterion_06_work_accounting():
    with _Budget("6 work-accounting", 10.0):
        # sparse run: instrumented sparsity equals mask-predicted sparsity
        cfg = EngineConfig(
            n_text=16, n_vision=112, b_q=16, b_k=16, pool_n=2, d=8, d_model=32,
            heads=2, tau_q=0.6, tau_kv=0.3, interval_n=4, order_d=1,
            steps=8, seed=21,
        )
        result = run(cfg)
        for sc in result.step_costs:
            assert sc.attn_pairs_skipped == sc.attn_pairs_mask_skipped

        # dispatch gemm_q MACs equal the active-row prediction exactly
        w = synthetic_workload(cfg)
        state = LayerState(
            params=w.layer_params[0],
            cache=FeatureCache(cfg.heads, cfg.t_q, cfg.order_d),
        )
        update_step(cfg, state, w.x(0), 0, StepCost(0, "update"))
        sc = StepCost(1, "dispatch")
        dispatch_step(cfg, state, w.x(1), 1, sc)
        active_rows = sum(
            int(decode_spatial(state.symbols[h], i)) * cfg.b_q
            for h in range(cfg.heads)
            for i in range(cfg.t_q)
        )
        assert sc.gemm_q_macs_actual == active_rows * cfg.d_model * cfg.d

        # zero-sparsity run: every actual counter equals its dense twin
        dense_cfg = EngineConfig(
            n_text=16, n_vision=112, b_q=16, b_k=16, pool_n=2, d=8, d_model=32,
            heads=2, tau_q=0.0, tau_kv=0.0, interval_n=4, order_d=1,
            steps=8, seed=21,
        )
        result = run(dense_cfg)
        assert result.report.sparsity == 0.0
        for sc in result.step_costs:
            assert sc.gemm_q_macs_actual == sc.gemm_q_macs_dense
            assert sc.gemm_o_macs_actual == sc.gemm_o_macs_dense
            assert sc.attn_pairs_skipped == 0


def test_criterion_07_forecast_exactness():
    with _Budget("7 forecast-exactness", 10.0):
        rng = np.random.default_rng(7)
        for trial in range(20):
            a = rng.standard_normal((8, 16)).astype(np.float32)
            b = (0.2 * rng.standard_normal((8, 16))).astype(np.float32)
            interval = int(rng.integers(2, 8))

            def f(t):
                return (a + t * b).astype(np.float32)

            entry = update_entry(None, f(0), 1)
            entry = update_entry(entry, f(interval), 1)
            for k in range(1, interval):
                got = forecast(entry, k, interval, 1)
                assert rel_err(got, f(interval + k)) < 1e-5
            # constant trajectory: exact reuse at order 0 after one update
            const = update_entry(None, a, 0)
            assert np.array_equal(forecast(const, 1, interval, 0), a)


def test_criterion_08_selection_oracle():
    with _Budget("8 selection-oracle", 10.0):
        rng = np.random.default_rng(8)
        for case in range(500):
            m = int(rng.integers(1, 33))
            c = rng.random(m)
            g = rng.random(m)
            tau = float(rng.choice([0.0, 1.0, rng.random(), rng.random()]))
            got = set(np.flatnonzero(select_cached_blocks(c, g, tau)))
            want = prefix_oracle(c, tau) & prefix_oracle(g, tau)
            assert got == want, f"case {case}"
            if tau == 0.0:
                assert got == set()
            if tau == 1.0:
                assert got == set(range(m))
            # monotonicity: smaller tau selects a subset
            smaller = set(
                np.flatnonzero(select_cached_blocks(c, g, tau * 0.5))
            )
            assert smaller <= got
        # skip selection against the same prefix rule
        for case in range(100):
            rows = int(rng.integers(2, 12))
            n_t = int(rng.integers(0, rows - 1))
            p = rng.random((rows, rows)).astype(np.float32) + 0.05
            p /= p.sum(axis=1, keepdims=True)
            m = CompressedAttnMap(p_tilde=p.astype(np.float32), n_t=n_t)
            tau = float(rng.choice([0.0, rng.random() * 0.9]))
            cache_bits = rng.random(rows) < 0.7
            keep = select_skip_blocks(m, cache_bits, tau)
            for r in range(rows):
                if not cache_bits[r]:
                    assert not keep[r].any()
                    continue
                protected = set(range(n_t)) | {r}
                cand = [j for j in range(rows) if j not in protected]
                skip_local = prefix_oracle(
                    [float(p[r, j]) for j in cand], tau, absolute=True
                )
                assert set(np.flatnonzero(~keep[r])) == {cand[i] for i in skip_local}


def test_criterion_09_error_interval_trend():
    with _Budget("9 error-vs-interval", 60.0):
        errors = []
        for interval in (3, 4, 5, 6, 7):
            cfg = EngineConfig(
                n_text=16, n_vision=112, b_q=16, b_k=16, pool_n=2, d=16,
                d_model=64, heads=2, tau_q=0.5, tau_kv=0.15,
                interval_n=interval, order_d=1, steps=22, seed=7,
                smoothness=0.08,
            )
            w = synthetic_workload(cfg)
            result = run(cfg, w)
            ref = dense_reference(cfg, w)
            errs = [max_rel_error(x, y) for x, y in zip(result.outputs, ref)]
            errors.append(float(np.mean(errs)))
        assert all(
            errors[i] <= errors[i + 1] for i in range(len(errors) - 1)
        ), errors


def test_criterion_10_end_to_end_transparency(capsys):
    with _Budget("10 transparency", 30.0):
        cfg = EngineConfig(
            n_text=16, n_vision=112, b_q=16, b_k=16, pool_n=2, d=16,
            d_model=64, heads=2, tau_q=0.0, tau_kv=0.0, interval_n=4,
            order_d=1, warmup=0, steps=10, seed=13,
        )
        w = synthetic_workload(cfg)
        result = run(cfg, w)
        ref = dense_reference(cfg, w)
        for t, (got, want) in enumerate(zip(result.outputs, ref)):
            assert max_rel_error(got, want) < 1e-5, f"step {t}"
        assert main(["verify", "--config", DEFAULT_CONFIG]) == 0
        capsys.readouterr()
