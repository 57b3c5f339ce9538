#!/usr/bin/env python3
"""Sweep eviction policies across keep ratios on one grid and print the
per-policy summary metrics."""

import argparse
import csv
from collections import defaultdict
from fractions import Fraction

from linear_kv.bench import run_sweep
from linear_kv.decoder import ModelConfig
from linear_kv.grid import GridSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--grid", default="16x16")
    ap.add_argument("--rhos", default="1/4,1/2,1")
    ap.add_argument("--policies", default="lineattn,streaming,random,h2o,full")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--out", default="out/sweep")
    args = ap.parse_args()

    spec = GridSpec.parse(args.grid)
    model = ModelConfig(layers=2, heads=2, kv_heads=2, head_dim=16, cond_len=8)
    summary = run_sweep(
        spec,
        [Fraction(r) for r in args.rhos.split(",")],
        args.policies.split(","),
        [int(s) for s in args.seeds.split(",")],
        model=model,
        out_dir=args.out,
    )

    table = defaultdict(list)
    with open(summary) as fh:
        for row in csv.DictReader(fh):
            if row["metric"] in ("peak_entries", "mean_flops_per_step"):
                table[(row["policy"], row["rho"], row["metric"])].append(float(row["value"]))
    print(f"{'policy':<12}{'rho':<8}{'peak entries':>14}{'mean flops':>16}")
    for (policy, rho, metric), values in sorted(table.items()):
        if metric != "peak_entries":
            continue
        flops = table[(policy, rho, "mean_flops_per_step")]
        print(
            f"{policy:<12}{rho:<8}"
            f"{sum(values) / len(values):>14.0f}"
            f"{sum(flops) / len(flops):>16.0f}"
        )
    print(f"\nfull summary: {summary}")


if __name__ == "__main__":
    main()
