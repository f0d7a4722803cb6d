"""Applied fraction and op counts for the lambda sweep values.

Usage: python3 scripts/lambda_sweep.py [--seeds 10000] [--out sweep.json]
"""

import argparse
import json
from collections import Counter

from motionkit import epi

LAMBDAS = (1.0, 0.98, 0.95, 0.90, 0.80)


def sweep(seeds: int, pool_size: int = 16):
    rows = []
    for lam in LAMBDAS:
        plans = [epi.sample_plan(s, lam, pool_size=pool_size) for s in range(seeds)]
        applied = [p for p in plans if p.applied]
        kinds = Counter(op.kind for p in applied for op in p.ops)
        rows.append({
            "lambda": lam,
            "applied_fraction": len(applied) / seeds,
            "mean_ops": sum(len(p.ops) for p in applied) / max(len(applied), 1),
            "op_counts": dict(sorted(kinds.items())),
        })
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10000)
    ap.add_argument("--out")
    args = ap.parse_args()
    rows = sweep(args.seeds)
    print(f"{'lambda':>7} {'applied':>8} {'mean ops':>9}")
    for r in rows:
        print(f"{r['lambda']:7.2f} {r['applied_fraction']:8.4f} {r['mean_ops']:9.3f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
