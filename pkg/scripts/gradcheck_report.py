"""Per-tensor gradient check table for one or more extractor configurations.

Configs are given as d,N,h triples, e.g. ``4,1,1 8,2,2``.
"""

import argparse
import sys

from motionkit.ipi import IPIConfig, gradcheck


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("configs", nargs="*", default=["4,1,1", "8,2,2"])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--tolerance", type=float, default=1e-5)
    args = ap.parse_args()
    ok = True
    for spec in args.configs:
        d, n, h = (int(v) for v in spec.split(","))
        rep = gradcheck(IPIConfig(depth=n, model_dim=d, num_heads=h), args.seed, tolerance=args.tolerance)
        print(f"d={d} N={n} h={h}  {'PASS' if rep.passed else 'FAIL'}")
        for name, err in rep.max_rel_error.items():
            print(f"  {name:<18} {err:.2e}")
        ok &= rep.passed
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
