"""Command-line front end.

Subcommands: generate one traced run, sweep benchmark cells, analyze a
recorded trace, self-check the fast paths against reference
implementations, and run the ablation arms. Exit codes: 0 on success, 2
for configuration or usage problems, 3 when a self-check fails.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace
from fractions import Fraction

import numpy as np

from . import analysis, bench
from .attention import softmax_rows
from .baselines import POLICY_NAMES, make_policy, streaming_retain
from .config import RunConfig, load_config, save_config
from .decoder import RasterDecoder, synth_condition
from .errors import ConfigError, LinearKVError
from .grid import GridSpec, budget_from_ratio
from .oracles import (
    bottom_k_reference,
    compression_lines_reference,
    saliency_reference,
    softmax_rows_reference,
    streaming_retained_reference,
)
from .policy import bottom_k, saliency
from .trace import DecodeTrace

OUT_ENV = "LINEAR_KV_OUT"

_CONFIG_FLAGS = (
    "grid",
    "rho",
    "policy",
    "n_init",
    "recent_lines",
    "layers",
    "heads",
    "kv_heads",
    "head_dim",
    "vocab",
    "cond_len",
    "seed",
    "trace_attention",
    "out",
)


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value file; explicit flags win over it")
    p.add_argument("--grid", help="grid as HxW, e.g. 8x8")
    p.add_argument("--rho", help="keep ratio as a fraction, e.g. 3/8 or 1")
    p.add_argument("--policy", choices=sorted(POLICY_NAMES))
    p.add_argument("--n-init", type=int, dest="n_init")
    p.add_argument("--recent-lines", type=int, dest="recent_lines")
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--kv-heads", type=int, dest="kv_heads")
    p.add_argument("--head-dim", type=int, dest="head_dim")
    p.add_argument("--vocab", type=int)
    p.add_argument("--cond-len", type=int, dest="cond_len")
    p.add_argument("--seed", type=int)
    p.add_argument("--trace-attention", action="store_true", default=None,
                   dest="trace_attention")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")


def _run_config(args) -> RunConfig:
    overrides = {
        name: getattr(args, name)
        for name in _CONFIG_FLAGS
        if getattr(args, name, None) is not None
    }
    if args.config:
        return load_config(args.config, overrides)
    return replace(RunConfig(), **overrides)


def _out_dir(cfg: RunConfig) -> str:
    path = cfg.out or os.environ.get(OUT_ENV) or "out"
    os.makedirs(path, exist_ok=True)
    return path


def _generate(cfg: RunConfig) -> DecodeTrace:
    spec, budget, model = cfg.resolve()
    decoder = RasterDecoder(model)
    return decoder.generate(
        synth_condition(model),
        spec,
        budget,
        make_policy(cfg.policy),
        trace_attention=bool(cfg.trace_attention),
    )


def cmd_generate(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(cfg)
    trace = _generate(cfg)
    path = os.path.join(out, "trace.jsonl")
    trace.write(path)
    save_config(cfg, os.path.join(out, "run_config.txt"))
    print(
        f"wrote {path}: {len(trace.steps)} steps, "
        f"{len(trace.evictions)} evictions, policy {cfg.policy}"
    )
    return 0


def cmd_bench(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(cfg)
    spec, _, model = cfg.resolve()
    rhos = [Fraction(r) for r in args.rhos.split(",")]
    policies = args.policies.split(",")
    for name in policies:
        if name not in POLICY_NAMES:
            raise ConfigError("unknown-policy", name)
    seeds = [int(s) for s in args.seeds.split(",")]
    summary = bench.run_sweep(
        spec,
        rhos,
        policies,
        seeds,
        model=model,
        out_dir=out,
        n_init=cfg.n_init,
        recent_lines=cfg.recent_lines,
    )
    print(f"wrote {summary}")
    return 0


def cmd_analyze(args) -> int:
    trace = DecodeTrace.read(args.trace)
    out = args.out or os.environ.get(OUT_ENV) or "out"
    os.makedirs(out, exist_ok=True)
    paths = [
        analysis.write_allocation_csv(trace, os.path.join(out, "allocation.csv")),
        analysis.write_interline_csv(trace, os.path.join(out, "interline.csv")),
        analysis.write_locality_csv(trace, os.path.join(out, "locality.csv")),
        analysis.write_summary_json(trace, os.path.join(out, "summary.json")),
    ]
    for p in paths:
        print(f"wrote {p}")
    return 0


ABLATION_ARMS = ("base", "disable-init", "disable-rec", "disable-mid", "attacc")


def _ablation_config(cfg: RunConfig, arm: str) -> RunConfig:
    if arm == "base":
        return replace(cfg, policy="lineattn")
    if arm == "disable-init":
        return replace(cfg, policy="lineattn", n_init=0)
    if arm == "disable-rec":
        return replace(cfg, policy="lineattn", recent_lines=0)
    if arm == "disable-mid":
        return replace(cfg, policy="streaming")
    if arm == "attacc":
        return replace(cfg, policy="attacc")
    raise ConfigError("unknown-ablation-arm", arm)


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(cfg)
    rows = []
    for arm in ABLATION_ARMS:
        arm_cfg = _ablation_config(cfg, arm)
        trace = _generate(arm_cfg)
        trace.write(os.path.join(out, f"trace_{arm}.jsonl"))
        stats = bench.summarize(trace)
        rows.append(
            [
                arm,
                arm_cfg.policy,
                trace.config["n_init"],
                trace.config["recent_lines"],
                len(trace.evictions),
                stats["peak_entries"],
                stats["mean_flops_per_step"],
            ]
        )
    path = os.path.join(out, "ablate_summary.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["arm", "policy", "n_init", "recent_lines", "evictions",
             "peak_entries", "mean_flops_per_step"]
        )
        writer.writerows(rows)
    print(f"wrote {path}")
    return 0


# -- self checks -------------------------------------------------------------


def _oracle_checks(trials: int, seed: int):
    rng = np.random.default_rng(seed)

    def check_softmax():
        for _ in range(trials):
            rows = rng.integers(1, 5)
            cols = rng.integers(1, 9)
            m = rng.normal(size=(rows, cols)) * 5
            got = softmax_rows(m)
            want = softmax_rows_reference(m.tolist())
            if not np.allclose(got, want, atol=1e-9):
                return False
        return True

    def check_saliency():
        for _ in range(trials):
            d = int(rng.integers(1, 9))
            guides = rng.normal(size=(int(rng.integers(1, 5)), d))
            keys = rng.normal(size=(int(rng.integers(1, 13)), d))
            got = saliency(guides, keys)
            want = saliency_reference(guides.tolist(), keys.tolist(), d ** -0.5)
            if not np.allclose(got, want, atol=1e-9):
                return False
        return True

    def check_bottom_k():
        for _ in range(trials):
            n = int(rng.integers(1, 17))
            scores = rng.integers(0, 4, size=n).astype(float)  # force ties
            k = int(rng.integers(0, n + 1))
            if not np.array_equal(bottom_k(scores, k), bottom_k_reference(scores.tolist(), k)):
                return False
        return True

    def check_streaming():
        spec = GridSpec(8, 8)
        cfg = budget_from_ratio(spec, Fraction(3, 8), n_init=8, recent_lines=1)
        for line in range(3, 8):
            got = streaming_retain(cfg, spec, line)
            want = streaming_retained_reference(cfg.n_init, cfg.budget, spec.width, line)
            if got.tolist() != want:
                return False
        return True

    def check_cadence():
        spec = GridSpec(8, 8)
        cfg = budget_from_ratio(spec, Fraction(3, 8), n_init=8, recent_lines=1)
        model_cfg = RunConfig(grid="8x8", rho="3/8", layers=1, heads=1, kv_heads=1,
                              head_dim=8, cond_len=4)
        trace = _generate(model_cfg)
        lines = sorted({e.line for e in trace.evictions})
        return lines == compression_lines_reference(spec.height, spec.width, cfg.budget)

    return [
        ("softmax-vs-reference", check_softmax),
        ("saliency-vs-reference", check_saliency),
        ("bottom-k-vs-reference", check_bottom_k),
        ("streaming-vs-reference", check_streaming),
        ("cadence-vs-reference", check_cadence),
    ]


def cmd_oracle(args) -> int:
    failures = 0
    for name, check in _oracle_checks(args.trials, args.seed):
        ok = check()
        print(f"check {name}: {'ok' if ok else 'FAIL'}")
        if not ok:
            failures += 1
    return 3 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="linear-kv",
        description="line-granular KV cache compression for raster decoding",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="run one decode and record its trace")
    _add_config_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("bench", help="sweep policies x ratios x seeds")
    _add_config_flags(p)
    p.add_argument("--rhos", default="3/8", help="comma-separated ratios")
    p.add_argument("--policies", default="lineattn,full", help="comma-separated names")
    p.add_argument("--seeds", default="0", help="comma-separated integers")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("analyze", help="attention analyses over a recorded trace")
    p.add_argument("--trace", required=True, help="trace.jsonl from generate")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("oracle", help="self-check fast paths against references")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("ablate", help="run the ablation arms on one setting")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LinearKVError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
