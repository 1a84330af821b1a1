"""Command-line entry point.

    omniattn run --config cfg.json [--seed N] [--report out.json] [--format json|csv]
    omniattn verify --config cfg.json
    omniattn speedup --interval 6 --sparsity 0.1,0.5,0.9

Exit codes: 0 success, 1 verification failure, 2 usage/config error,
3 internal invariant violation.
"""

import argparse
import csv
import dataclasses
import io
import json
import os
import sys
import time

from . import _kernels
from .costs import theoretical_speedup_attention, theoretical_speedup_gemm_o
from .errors import ConsistencyError, ParameterError, ShapeError, StateError
from .pipeline import config_from_dict, dense_reference, max_rel_error, run, synthetic_workload
from .verify import run_verification

CSV_COLUMNS = [
    "step",
    "phase",
    "attn_pairs_total",
    "attn_pairs_skipped",
    "gemm_q_macs",
    "gemm_o_macs",
    "sparsity",
    "max_rel_err",
]


def _load_config(path):
    with open(path) as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise ParameterError("config must be a flat JSON object")
    return config_from_dict(data)


def _build_manifest(config, result, errors):
    report = result.report.to_dict()
    steps = report.pop("steps")
    for row, err in zip(steps, errors):
        row["max_rel_err"] = err
    return {
        "config": dataclasses.asdict(config),
        "seed": config.seed,
        "backend": _kernels.get_backend().NAME,
        "aggregate": report,
        "max_rel_err": max(errors),
        "steps": steps,
    }


def cmd_run(args):
    config = _load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    start = time.perf_counter()
    workload = synthetic_workload(config)
    result = run(config, workload)
    reference = dense_reference(config, workload)
    errors = [max_rel_error(a, b) for a, b in zip(result.outputs, reference)]
    wall = time.perf_counter() - start

    if args.dump_symbols:
        os.makedirs(args.dump_symbols, exist_ok=True)
        for layer, state in enumerate(result.states):
            for head, sym in enumerate(state.symbols):
                path = os.path.join(
                    args.dump_symbols, f"layer{layer}_head{head}.sym"
                )
                with open(path, "wb") as f:
                    f.write(sym.to_bytes())

    if args.format == "json":
        manifest = _build_manifest(config, result, errors)
        manifest["wall_time_s"] = wall
        text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    else:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(CSV_COLUMNS)
        for sc, err in zip(result.step_costs, errors):
            writer.writerow(
                [
                    sc.step,
                    sc.phase,
                    sc.attn_pairs_total,
                    sc.attn_pairs_skipped,
                    sc.gemm_q_macs_actual,
                    sc.gemm_o_macs_actual,
                    repr(sc.sparsity),
                    repr(err),
                ]
            )
        text = buf.getvalue()

    if args.report:
        with open(args.report, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_verify(args):
    config = _load_config(args.config)
    ok = run_verification(config, fault=args.inject_fault)
    return 0 if ok else 1


def cmd_speedup(args):
    try:
        values = [float(s) for s in args.sparsity.split(",") if s.strip()]
    except ValueError:
        raise ParameterError(f"bad sparsity list: {args.sparsity!r}")
    if not values:
        raise ParameterError("sparsity list is empty")
    rows = [
        (s, theoretical_speedup_gemm_o(args.interval, s), theoretical_speedup_attention(s))
        for s in values
    ]
    print(f"{'sparsity':>10} {'gemm_o':>10} {'attention':>10}")
    for s, g, a in rows:
        print(f"{s:>10.3f} {g:>10.3f} {a:>10.3f}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="omniattn",
        description="Symbol-guided block-sparse attention engine",
    )
    sub = p.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a configured pipeline run")
    p_run.add_argument("--config", required=True, help="flat JSON config file")
    p_run.add_argument("--seed", type=int, default=None, help="override config seed")
    p_run.add_argument("--report", default=None, help="write the report here")
    p_run.add_argument("--format", choices=("json", "csv"), default="json")
    p_run.add_argument(
        "--dump-symbols",
        default=None,
        metavar="DIR",
        help="debug: dump the final update step's symbol buffers here",
    )
    p_run.set_defaults(fn=cmd_run)

    p_ver = sub.add_parser("verify", help="run the property suite at config shape")
    p_ver.add_argument("--config", required=True)
    p_ver.add_argument("--inject-fault", default=None, help=argparse.SUPPRESS)
    p_ver.set_defaults(fn=cmd_verify)

    p_sp = sub.add_parser("speedup", help="print theoretical speedup table")
    p_sp.add_argument("--interval", type=int, required=True)
    p_sp.add_argument("--sparsity", required=True, help="comma-separated fractions")
    p_sp.set_defaults(fn=cmd_speedup)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ParameterError, ShapeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ConsistencyError, StateError) as e:
        print(f"internal error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
