"""Block-sparse attention engine with symbol-guided caching and skipping.

Logical block masks are packed into compact byte symbols, refreshed every
update step and consumed by a single attention kernel plus sparse
projections during the dispatch steps in between. Every sparse path is
verified against dense oracles, and all work is accounted in exact
operation counts with analytical speedup models.
"""

from . import _kernels
from .attention import (
    CacheEntry,
    FeatureCache,
    OnlineSoftmaxState,
    forecast,
    forecast_coefficients,
    online_softmax_finalize,
    online_softmax_update,
    sparse_attention,
    update_entry,
)
from .costs import (
    CostReport,
    StepCost,
    account_run,
    sparsity,
    theoretical_speedup_attention,
    theoretical_speedup_gemm_o,
)
from .errors import (
    BoundsError,
    ConsistencyError,
    EngineError,
    ParameterError,
    ShapeError,
    StateError,
)
from .gemm import CachedBias, project_out_dispatch, project_out_update, project_q
from .pipeline import (
    EngineConfig,
    RunResult,
    config_from_dict,
    dense_reference,
    max_rel_error,
    run,
    synthetic_workload,
)
from .policy import (
    CompressedAttnMap,
    compressed_attention,
    degrade_to_full_cache,
    generate_masks,
    ramp_threshold,
    select_cached_blocks,
    select_skip_blocks,
    text_to_vision_guidance,
    vision_to_text_contribution,
)
from .symbols import (
    SymbolBuffer,
    build_symbols,
    decode_reduction,
    decode_run,
    decode_spatial,
    encode_cache_mask,
    encode_skip_mask,
)
from .tensor import (
    dense_attention,
    matmul,
    mean_pool_blocks,
    rms_norm,
    rope,
    row_softmax,
)

__version__ = "0.1.0"


def backend_name():
    """Name of the kernel backend the engine will use by default."""
    return _kernels.get_backend().NAME
