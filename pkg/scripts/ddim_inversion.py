"""Reconstruction error of strided DDIM with the oracle denoiser, per step count and eta."""

import argparse

import numpy as np

from motionkit import diffusion


def run(T, steps, eta, shape, seed):
    sched = diffusion.make_schedule(T, "linear")
    rng = np.random.default_rng(seed)
    z0 = rng.standard_normal(shape)
    zT = diffusion.q_sample(z0, T, rng.standard_normal(shape), sched)
    calls = [0]
    oracle = diffusion.oracle_denoiser(z0, sched)

    def den(z, t, c=None):
        calls[0] += 1
        return oracle(z, t)

    out = diffusion.sample(den, zT, sched, steps=steps, eta=eta, noise_source=rng)
    return float(np.abs(out - z0).max()), calls[0]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--T", type=int, default=1000)
    ap.add_argument("--steps", default="1,10,50,100,250,1000")
    ap.add_argument("--eta", default="0,0.5,1")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print(f"{'steps':>6} {'eta':>5} {'calls':>6} {'max |err|':>11}")
    for eta in (float(e) for e in args.eta.split(",")):
        for steps in (int(s) for s in args.steps.split(",")):
            err, calls = run(args.T, steps, eta, (4, 8, 8), args.seed)
            print(f"{steps:6d} {eta:5.2f} {calls:6d} {err:11.3e}")


if __name__ == "__main__":
    main()
