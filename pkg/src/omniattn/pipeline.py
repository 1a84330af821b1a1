"""Update-dispatch scheduler over a synthetic workload.

Step t is an update step iff t % interval_n == 0: the engine refreshes
symbols from the fresh q/k, runs dense attention, pushes every tile into
the feature cache, and rebuilds the output-projection bias. The steps in
between dispatch against those symbols: row-skipped query projection,
symbol-guided attention with cached tiles left unmaterialized, and the
bias-carrying output projection. No model weights are involved — the
workload is a deterministic synthetic feature trajectory.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from .attention import AttnCounters, FeatureCache, sparse_attention
from .costs import StepCost, account_run
from .errors import ParameterError
from .gemm import GemmCounters, project_out_dispatch, project_out_update, project_q
from .policy import generate_masks, ramp_threshold
from .symbols import build_symbols, ceil_div
from .tensor import DTYPE, dense_attention, rms_norm, rope

WORKLOAD_KINDS = ("drift", "poly1", "poly2")


@dataclass(frozen=True)
class EngineConfig:
    """Workload shape and sparsity hyperparameters.

    tau_q budgets query-block caching, tau_kv budgets key-block skipping,
    interval_n is the update cycle length, order_d the forecast order, and
    s_q the computed-fraction floor below which a layer degrades to
    full-feature caching. warmup linearly ramps both thresholds.
    """

    n_text: int
    n_vision: int
    b_q: int = 16
    b_k: int = 16
    pool_n: int = 1
    d: int = 16
    d_model: int = 64
    heads: int = 2
    tau_q: float = 0.0
    tau_kv: float = 0.0
    interval_n: int = 1
    order_d: int = 0
    s_q: float = 0.0
    steps: int = 8
    warmup: int = 0
    seed: int = 0
    layers: int = 1
    smoothness: float = 0.05
    workload: str = "drift"
    skip_guard: bool = True

    def __post_init__(self):
        for name in ("n_text", "n_vision", "b_q", "b_k", "pool_n", "d",
                     "d_model", "heads", "interval_n", "steps", "layers"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.order_d < 0 or self.warmup < 0:
            raise ParameterError("order_d and warmup must be >= 0")
        if self.d % 2 != 0:
            raise ParameterError(f"d must be even for rotary encoding, got {self.d}")
        for name in ("tau_q", "tau_kv", "s_q"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ParameterError(f"{name} must be in [0, 1], got {v}")
        if self.smoothness < 0:
            raise ParameterError(f"smoothness must be >= 0, got {self.smoothness}")
        if not 0 <= self.seed < 2**64:
            raise ParameterError("seed must be an unsigned 64-bit integer")
        if self.workload not in WORKLOAD_KINDS:
            raise ParameterError(
                f"workload must be one of {WORKLOAD_KINDS}, got {self.workload!r}"
            )
        n = self.n_tokens
        if ceil_div(n, self.pool_n * self.b_q) != ceil_div(n, self.pool_n * self.b_k):
            raise ParameterError(
                "compressed query/key grids must align (choose b_q/b_k accordingly)"
            )
        if ceil_div(self.n_text, self.pool_n * self.b_q) != ceil_div(
            self.n_text, self.pool_n * self.b_k
        ):
            raise ParameterError("compressed text regions must align across q/k")

    @property
    def n_tokens(self):
        return self.n_text + self.n_vision

    @property
    def t_q(self):
        return ceil_div(self.n_tokens, self.b_q)

    @property
    def t_kv(self):
        return ceil_div(self.n_tokens, self.b_k)


def config_from_dict(data):
    """Build an EngineConfig from a flat mapping; unknown keys are errors."""
    known = {f.name for f in fields(EngineConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ParameterError(f"unknown config keys: {', '.join(unknown)}")
    if "n_text" not in data or "n_vision" not in data:
        raise ParameterError("config requires n_text and n_vision")
    return EngineConfig(**data)


@dataclass
class LayerParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    q_norm: np.ndarray
    k_norm: np.ndarray
    w_out: np.ndarray


class SyntheticWorkload:
    """Deterministic per-step features plus fixed per-layer weights.

    drift: base + smoothness * (t * a + t^2/steps * b) — smooth with
    curvature, so forecast error grows with the update interval.
    poly1 / poly2: exactly affine / quadratic in the step index.
    smoothness = 0 gives a constant trajectory in every mode.
    """

    def __init__(self, config, seed=None, smoothness=None, kind=None):
        self.config = config
        self.smoothness = config.smoothness if smoothness is None else smoothness
        self.kind = config.workload if kind is None else kind
        if self.smoothness < 0:
            raise ParameterError(f"smoothness must be >= 0, got {self.smoothness}")
        if self.kind not in WORKLOAD_KINDS:
            raise ParameterError(f"unknown workload kind {self.kind!r}")
        rng = np.random.default_rng(config.seed if seed is None else seed)
        n, dm, d, heads = config.n_tokens, config.d_model, config.d, config.heads

        def w(shape, scale):
            return (rng.standard_normal(shape) * scale).astype(DTYPE)

        self.layer_params = [
            LayerParams(
                w_q=w((heads, dm, d), dm**-0.5),
                w_k=w((heads, dm, d), dm**-0.5),
                w_v=w((heads, dm, d), dm**-0.5),
                q_norm=(1.0 + 0.05 * rng.standard_normal((heads, d))).astype(DTYPE),
                k_norm=(1.0 + 0.05 * rng.standard_normal((heads, d))).astype(DTYPE),
                w_out=w((heads, d, dm), d**-0.5),
            )
            for _ in range(config.layers)
        ]
        self.x0 = w((n, dm), 1.0)
        self.a = w((n, dm), 1.0)
        self.b = w((n, dm), 1.0)

    def x(self, t):
        """Feature matrix for step t, float32 (n_tokens, d_model)."""
        s = self.smoothness
        base = self.x0.astype(np.float64)
        if self.kind == "drift":
            steps = max(self.config.steps, 1)
            base = base + s * (t * self.a + (t * t / steps) * self.b)
        elif self.kind == "poly1":
            base = base + (s * t) * self.a
        else:
            base = base + (s * t) * self.a + (s * t) ** 2 * self.b
        return base.astype(DTYPE)


def synthetic_workload(config, seed=None, smoothness=None, kind=None):
    return SyntheticWorkload(config, seed=seed, smoothness=smoothness, kind=kind)


@dataclass
class LayerState:
    params: LayerParams
    cache: FeatureCache
    symbols: list | None = None
    bias: object | None = None
    mask_computed_pairs: int = 0


@dataclass
class RunResult:
    outputs: list
    step_costs: list
    report: object
    states: list = None


def _worker_count(heads):
    env = os.environ.get("OMNI_THREADS", "").strip()
    if not env:
        return 1
    try:
        v = int(env)
    except ValueError:
        raise ParameterError(f"OMNI_THREADS must be an integer, got {env!r}")
    if v < 0:
        raise ParameterError(f"OMNI_THREADS must be >= 0, got {v}")
    if v == 0:
        v = os.cpu_count() or 1
    return max(1, min(heads, v))


def _map_heads(fn, heads):
    """Run fn(h) for each head, optionally on a thread pool; results are
    merged in head order so counters stay deterministic."""
    workers = _worker_count(heads)
    if workers == 1:
        return [fn(h) for h in range(heads)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(heads)))


def _project_kv(x, params, positions, eps=1e-6):
    heads = params.w_k.shape[0]
    n = x.shape[0]
    d = params.w_k.shape[2]
    k = np.empty((heads, n, d), dtype=DTYPE)
    v = np.empty((heads, n, d), dtype=DTYPE)
    for h in range(heads):
        kh = x @ params.w_k[h]
        kh = rms_norm(kh, params.k_norm[h], eps)
        k[h] = rope(kh, positions)
        v[h] = x @ params.w_v[h]
    return k, v


def _all_active_symbols(config):
    cache_bits = np.ones(config.t_q, dtype=bool)
    skip_bits = np.ones((config.t_q, config.t_kv), dtype=bool)
    sym = build_symbols(cache_bits, skip_bits, config.pool_n)
    return [sym] * config.heads


def update_step(config, state, x, t, sc):
    """Refresh symbols, cache, and bias; compute the step densely."""
    gc = GemmCounters()
    positions = np.arange(x.shape[0])
    q = project_q(
        x, state.params.w_q, state.params.q_norm, None, "update",
        b_q=config.b_q, positions=positions, counters=gc,
    )
    k, v = _project_kv(x, state.params, positions)

    tau_q = ramp_threshold(config.tau_q, t, config.warmup)
    tau_kv = ramp_threshold(config.tau_kv, t, config.warmup)
    new_symbols = []
    mask_computed = 0
    for h in range(config.heads):
        cache_bits, skip_bits = generate_masks(
            q[h], k[h],
            b_q=config.b_q, b_k=config.b_k, pool_n=config.pool_n,
            n_text=config.n_text, tau_q=tau_q, tau_kv=tau_kv,
            s_q=config.s_q, guard=config.skip_guard,
        )
        new_symbols.append(build_symbols(cache_bits, skip_bits, config.pool_n))
        mask_computed += int(skip_bits[cache_bits].sum())

    o_list = _map_heads(lambda h: dense_attention(q[h], k[h], v[h]), config.heads)
    o_heads = np.stack(o_list)
    pairs = config.heads * config.t_q * config.t_kv
    sc.attn_pairs_total += pairs
    sc.attn_pairs_computed += pairs

    n = x.shape[0]
    for h in range(config.heads):
        for i in range(config.t_q):
            r0 = i * config.b_q
            state.cache.update(h, i, o_heads[h, r0 : min(r0 + config.b_q, n)])

    out, bias = project_out_update(
        o_heads, state.params.w_out, new_symbols, state.cache, config.order_d,
        b_q=config.b_q, counters=gc,
    )
    state.symbols = new_symbols
    state.bias = bias
    state.mask_computed_pairs = mask_computed
    _fold_gemm(sc, gc)
    return out


def dispatch_step(config, state, x, elapsed_k, sc, backend=None, fill=0.0):
    """Sparse execution against the governing update step's symbols."""
    gc = GemmCounters()
    positions = np.arange(x.shape[0])
    q = project_q(
        x, state.params.w_q, state.params.q_norm, state.symbols, "dispatch",
        b_q=config.b_q, positions=positions, counters=gc, fill=fill,
    )
    k, v = _project_kv(x, state.params, positions)

    def attend(h):
        ac = AttnCounters()
        o = sparse_attention(
            q[h], k[h], v[h], state.symbols[h], state.cache, h,
            elapsed_k, config.interval_n, config.order_d,
            b_q=config.b_q, b_k=config.b_k, mode="bias",
            counters=ac, backend=backend, fill=fill,
        )
        return o, ac

    results = _map_heads(attend, config.heads)
    o_heads = np.stack([o for o, _ in results])
    for _, ac in results:
        sc.attn_pairs_total += ac.pairs_total
        sc.attn_pairs_computed += ac.pairs_computed
    sc.attn_pairs_mask_skipped += (
        config.heads * config.t_q * config.t_kv - state.mask_computed_pairs
    )

    out = project_out_dispatch(
        o_heads, state.params.w_out, state.symbols, state.bias,
        elapsed_k, config.interval_n, config.order_d,
        b_q=config.b_q, counters=gc,
    )
    _fold_gemm(sc, gc)
    return out


def _fold_gemm(sc, gc):
    sc.gemm_q_macs_dense += gc.q_macs_dense
    sc.gemm_q_macs_actual += gc.q_macs_actual
    sc.gemm_o_macs_dense += gc.o_macs_dense
    sc.gemm_o_macs_actual += gc.o_macs_actual
    sc.gemm_o_bias_macs += gc.o_bias_macs


def run(config, workload=None, *, backend=None, fill=0.0):
    """Drive the full update-dispatch schedule.

    Returns per-step outputs of the last layer plus the aggregated,
    cross-checked cost report.
    """
    if workload is None:
        workload = synthetic_workload(config)
    states = [
        LayerState(
            params=workload.layer_params[layer],
            cache=FeatureCache(config.heads, config.t_q, config.order_d),
        )
        for layer in range(config.layers)
    ]
    outputs = []
    step_costs = []
    for t in range(config.steps):
        phase = "update" if t % config.interval_n == 0 else "dispatch"
        sc = StepCost(step=t, phase=phase)
        x = workload.x(t)
        for state in states:
            if phase == "update":
                x = update_step(config, state, x, t, sc)
            else:
                x = dispatch_step(
                    config, state, x, t % config.interval_n, sc,
                    backend=backend, fill=fill,
                )
        outputs.append(x)
        step_costs.append(sc)
    report = account_run(step_costs, config.interval_n)
    return RunResult(
        outputs=outputs, step_costs=step_costs, report=report, states=states
    )


def dense_reference(config, workload=None):
    """Plain dense pipeline over the same workload: the trajectory oracle."""
    if workload is None:
        workload = synthetic_workload(config)
    symbols = _all_active_symbols(config)
    dummy = FeatureCache(config.heads, config.t_q, config.order_d)
    outputs = []
    positions = np.arange(config.n_tokens)
    for t in range(config.steps):
        x = workload.x(t)
        for layer in range(config.layers):
            params = workload.layer_params[layer]
            q = project_q(
                x, params.w_q, params.q_norm, None, "update",
                b_q=config.b_q, positions=positions,
            )
            k, v = _project_kv(x, params, positions)
            o_heads = np.stack(
                [dense_attention(q[h], k[h], v[h]) for h in range(config.heads)]
            )
            x, _ = project_out_update(
                o_heads, params.w_out, symbols, dummy, config.order_d,
                b_q=config.b_q,
            )
        outputs.append(x)
    return outputs


def max_rel_error(a, b):
    """max |a-b| over max |b| — the trajectory comparison metric."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(float(np.max(np.abs(b))), 1e-30)
    return float(np.max(np.abs(a - b))) / denom
