"""Work accounting and analytical speedup models.

All work is counted in exact integer units — attention block pairs and
projection multiply-accumulates — never wall-clock. Sparsity is the
skipped fraction of attention pairs. The speedup formulas give the
theoretical ceilings the measured counts are compared against: attention
work shrinks by 1/(1-s), while the output projection amortizes one dense
pass per update cycle of N steps, giving N / (1 + (N-1)(1-s)).
"""

from dataclasses import asdict, dataclass, field

from .errors import ConsistencyError, ParameterError


def sparsity(skipped, total):
    """Skipped attention pairs over total pairs, as an exact ratio."""
    if total <= 0:
        raise ParameterError(f"total must be positive, got {total}")
    if skipped < 0 or skipped > total:
        raise ParameterError(f"skipped={skipped} outside [0, {total}]")
    return skipped / total


def theoretical_speedup_attention(s):
    """Work-reduction bound for the attention kernel: 1/(1-s)."""
    if not 0.0 <= s < 1.0:
        raise ParameterError(f"sparsity must be in [0, 1), got {s}")
    return 1.0 / (1.0 - s)


def theoretical_speedup_gemm_o(interval_n, s):
    """Amortized output-projection speedup over one update cycle.

    One dense pass at the update step plus (interval_n - 1) dispatch steps
    each costing the (1-s) unskipped fraction: interval_n / (1 + (interval_n-1)(1-s)).
    """
    if interval_n < 1:
        raise ParameterError(f"interval_n must be >= 1, got {interval_n}")
    if not 0.0 <= s <= 1.0:
        raise ParameterError(f"sparsity must be in [0, 1], got {s}")
    return interval_n / (1.0 + (interval_n - 1) * (1.0 - s))


@dataclass
class StepCost:
    """Counters for one pipeline step."""

    step: int
    phase: str
    attn_pairs_total: int = 0
    attn_pairs_computed: int = 0
    attn_pairs_mask_skipped: int = 0
    gemm_q_macs_dense: int = 0
    gemm_q_macs_actual: int = 0
    gemm_o_macs_dense: int = 0
    gemm_o_macs_actual: int = 0
    gemm_o_bias_macs: int = 0

    @property
    def attn_pairs_skipped(self):
        return self.attn_pairs_total - self.attn_pairs_computed

    @property
    def sparsity(self):
        return sparsity(self.attn_pairs_skipped, self.attn_pairs_total)


@dataclass
class CostReport:
    """Aggregated accounting for a full run."""

    attn_pairs_total: int
    attn_pairs_skipped: int
    gemm_q_macs_dense: int
    gemm_q_macs_actual: int
    gemm_o_macs_dense: int
    gemm_o_macs_actual: int
    gemm_o_bias_macs: int
    sparsity: float
    speedup_attention: float | None
    speedup_gemm_o: float
    steps: list = field(default_factory=list, repr=False)

    def to_dict(self):
        d = asdict(self)
        d["steps"] = [asdict(s) for s in self.steps]
        for row, s in zip(d["steps"], self.steps):
            row["attn_pairs_skipped"] = s.attn_pairs_skipped
            row["sparsity"] = s.sparsity
        return d


def account_run(step_costs, interval_n):
    """Aggregate per-step counters and cross-check their invariants.

    The instrumented skip counts must equal the mask-predicted counts and
    no actual counter may exceed its dense counterpart; a violation means
    an engine bug, not a configuration problem.
    """
    total = skipped = 0
    agg = {
        "gemm_q_macs_dense": 0,
        "gemm_q_macs_actual": 0,
        "gemm_o_macs_dense": 0,
        "gemm_o_macs_actual": 0,
        "gemm_o_bias_macs": 0,
    }
    for sc in step_costs:
        if sc.attn_pairs_computed > sc.attn_pairs_total:
            raise ConsistencyError(f"step {sc.step}: computed pairs exceed total")
        if sc.attn_pairs_skipped != sc.attn_pairs_mask_skipped:
            raise ConsistencyError(
                f"step {sc.step}: instrumented skips {sc.attn_pairs_skipped} "
                f"!= mask-predicted {sc.attn_pairs_mask_skipped}"
            )
        if sc.gemm_q_macs_actual > sc.gemm_q_macs_dense:
            raise ConsistencyError(f"step {sc.step}: gemm_q actual exceeds dense")
        if sc.gemm_o_macs_actual > sc.gemm_o_macs_dense:
            raise ConsistencyError(f"step {sc.step}: gemm_o actual exceeds dense")
        total += sc.attn_pairs_total
        skipped += sc.attn_pairs_skipped
        for key in agg:
            agg[key] += getattr(sc, key)
    s = sparsity(skipped, total)
    return CostReport(
        attn_pairs_total=total,
        attn_pairs_skipped=skipped,
        sparsity=s,
        speedup_attention=theoretical_speedup_attention(s) if s < 1.0 else None,
        speedup_gemm_o=theoretical_speedup_gemm_o(interval_n, s),
        steps=list(step_costs),
        **agg,
    )
