"""Acceptance criteria, one test each; the terminal summary lists PASS/FAIL per criterion."""

import inspect
import json
import math
import os
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from motionkit import diffusion, epi, ipi, metrics
from motionkit.cli import main
from motionkit.pose_model import (
    MIN_CONFIDENCE, TOPOLOGY, count_elements, parse_pose_sequence, serialize_pose_sequence,
    torso_length,
)
from motionkit.synthetic import random_anchor, random_sequence, rigid_sequence

BONES = np.array(TOPOLOGY.bones)


def bone_vectors(body):
    """(17, 2) bone vectors and a visibility mask."""
    vis = (body[BONES[:, 0], 2] >= MIN_CONFIDENCE) & (body[BONES[:, 1], 2] >= MIN_CONFIDENCE)
    return body[BONES[:, 1], :2] - body[BONES[:, 0], :2], vis


def connected(body):
    """Joints linked to the neck through visible joints only."""
    vis = body[:, 2] >= MIN_CONFIDENCE
    keep = np.zeros(len(body), dtype=bool)
    for j in range(len(body)):
        k, ok = j, vis[j]
        while ok and TOPOLOGY.parent[k] != -1:
            k = TOPOLOGY.parent[k]
            ok = vis[k]
        keep[j] = ok
    return keep


def angle_between(u, v):
    return np.abs(np.arctan2(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0], (u * v).sum(axis=1)))


def wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def write_corpus(directory, rng, frame_counts=(12, 9, 15)):
    directory.mkdir()
    for k, n in enumerate(frame_counts):
        (directory / f"clip{k}.json").write_text(serialize_pose_sequence(rigid_sequence(rng, frames=n)))
    return directory


def test_ac1_realignment_contract(acceptance):
    with acceptance.criterion("AC1 EPI realignment contract") as note:
        rng = np.random.default_rng(101)
        t0 = time.perf_counter()
        worst_ang = worst_len = worst_idem = 0.0
        idem_cases = 0
        for _ in range(1000):
            seq = random_sequence(rng, frames=1, missing_prob=0.1)
            anchor = random_anchor(rng, missing_prob=0.1)
            drv = seq.frames[0].body
            out = epi.realign(seq, anchor).frames[0].body
            u, vis_d = bone_vectors(drv)
            v, vis_o = bone_vectors(out)
            a, vis_a = bone_vectors(anchor)
            if (vis_o & ~vis_d).any():
                raise AssertionError("realign produced a bone missing from the driving pose")
            if vis_o.any():
                worst_ang = max(worst_ang, angle_between(u[vis_o], v[vis_o]).max())
            both = vis_o & vis_a
            if both.any():
                worst_len = max(worst_len, np.abs(np.hypot(*v[both].T) - np.hypot(*a[both].T)).max())
            # anchor equal to the driving pose returns it unchanged (needs a usable torso)
            if torso_length(drv) is not None:
                same = epi.realign(seq, drv).frames[0].body
                keep = connected(drv)
                worst_idem = max(worst_idem, np.abs(same[keep] - drv[keep]).max())
                # visible joints cut off from the neck are emitted missing
                assert not same[~keep, 2].any()
                idem_cases += 1
        elapsed = time.perf_counter() - t0
        note["detail"] = (f"angle {worst_ang:.1e} rad, length {worst_len:.1e}, "
                          f"idempotence {worst_idem:.1e} on {idem_cases}, {elapsed:.1f}s")
        assert idem_cases > 500
        assert worst_ang < 1e-7
        assert worst_len <= 1e-9
        assert worst_idem <= 1e-9
        assert elapsed < 10


def test_ac2_motion_preservation(acceptance):
    with acceptance.criterion("AC2 EPI motion preservation") as note:
        rng = np.random.default_rng(202)
        worst = 0.0
        for _ in range(100):
            seq = rigid_sequence(rng, frames=32, missing_prob=0.05)
            out = epi.realign(seq, random_anchor(rng))
            ang_in, ang_out, vis = [], [], []
            for f_in, f_out in zip(seq.frames, out.frames):
                u, vu = bone_vectors(f_in.body)
                v, vv = bone_vectors(f_out.body)
                ang_in.append(np.arctan2(u[:, 1], u[:, 0]))
                ang_out.append(np.arctan2(v[:, 1], v[:, 0]))
                vis.append(vu & vv)
            ang_in, ang_out, vis = map(np.array, (ang_in, ang_out, vis))
            ok = vis[1:] & vis[:-1]
            d_in = wrap(np.diff(ang_in, axis=0))
            d_out = wrap(np.diff(ang_out, axis=0))
            if ok.any():
                worst = max(worst, np.abs(wrap(d_in - d_out))[ok].max())
        note["detail"] = f"worst delta change {worst:.1e} rad over 100 x 32 frames"
        assert worst < 1e-7


def test_ac3_lambda_semantics(acceptance, tmp_path):
    with acceptance.criterion("AC3 lambda semantics") as note:
        rng = np.random.default_rng(303)
        seq = rigid_sequence(rng, frames=8)
        ref = serialize_pose_sequence(seq)
        anchor = random_anchor(rng)
        for seed in range(500):
            plan = epi.sample_plan(seed, 0.0)
            assert not plan.applied
            assert serialize_pose_sequence(epi.apply_plan(seq, plan, anchor)) == ref
        frac = float(np.mean([epi.sample_plan(s, 0.98).applied for s in range(10000)]))
        assert 0.97 <= frac <= 0.99

        corpus = write_corpus(tmp_path / "corpus", rng)
        pool = tmp_path / "pool.json"
        assert main(["--quiet", "pool", "build", "--in", str(corpus), "--out", str(pool)]) == 0
        swept = []
        for lam in (1.0, 0.98, 0.95, 0.90, 0.80):
            cfg = tmp_path / f"lam{lam}.json"
            cfg.write_text(json.dumps({"lambda": lam}))
            plan = tmp_path / f"plan{lam}.json"
            code = main(["--quiet", "--config", str(cfg), "transform", "--in", str(corpus / "clip0.json"),
                         "--pool", str(pool), "--out", str(tmp_path / "o.json"), "--plan-out", str(plan)])
            assert code == 0 and json.loads(plan.read_text())["lambda"] == lam
            swept.append(lam)
        note["detail"] = f"lambda=0 passthrough on 500 seeds, applied fraction {frac:.4f}, sweep {swept} ok"


def _transform(args):
    corpus, pool, out_dir, seed, tag = args
    out, plan = out_dir / f"o_{seed}_{tag}.json", out_dir / f"p_{seed}_{tag}.json"
    code = main(["--quiet", "--seed", str(seed), "transform", "--in", str(corpus / "clip1.json"),
                 "--pool", str(pool), "--lambda", "1", "--out", str(out), "--plan-out", str(plan)])
    assert code == 0
    return out.read_bytes(), plan.read_bytes()


def test_ac4_plan_determinism(acceptance, tmp_path):
    with acceptance.criterion("AC4 plan determinism") as note:
        rng = np.random.default_rng(404)
        corpus = write_corpus(tmp_path / "corpus", rng)
        pool = tmp_path / "pool.json"
        assert main(["--quiet", "pool", "build", "--in", str(corpus), "--stride", "3", "--out", str(pool)]) == 0
        seeds = list(range(12))
        base = {s: _transform((corpus, pool, tmp_path, s, "serial")) for s in seeds}
        base2 = {s: _transform((corpus, pool, tmp_path, s, "again")) for s in seeds}
        assert base == base2
        for workers in (2, 8):
            with ThreadPoolExecutor(max_workers=workers) as ex:
                got = list(ex.map(_transform, [(corpus, pool, tmp_path, s, f"w{workers}") for s in seeds]))
            assert dict(zip(seeds, got)) == base
        # BLAS thread count must not matter either
        outs = []
        for threads in ("1", "4"):
            env = dict(os.environ, OMP_NUM_THREADS=threads, OPENBLAS_NUM_THREADS=threads, MKL_NUM_THREADS=threads)
            o = tmp_path / f"sub{threads}.json"
            subprocess.run([sys.executable, "-m", "motionkit", "--quiet", "--seed", "3", "transform",
                            "--in", str(corpus / "clip1.json"), "--pool", str(pool), "--lambda", "1",
                            "--out", str(o), "--plan-out", str(tmp_path / f"subplan{threads}.json")],
                           check=True, env=env)
            outs.append((o.read_bytes(), (tmp_path / f"subplan{threads}.json").read_bytes()))
        assert outs[0] == outs[1] == base[3]
        distinct = len({v for v in base.values()})
        note["detail"] = f"{len(seeds)} seeds x (2 serial + 2 thread pools + 2 BLAS settings), {distinct} distinct outputs"


def test_ac5_forward_law(acceptance):
    with acceptance.criterion("AC5 diffusion forward law") as note:
        t0 = time.perf_counter()
        sched = diffusion.make_schedule(1000, "linear")
        rng = np.random.default_rng(505)
        n = 10000
        z = np.full(n, 0.8)
        details = []
        for t in range(1, 1001):
            z = diffusion.q_step(z, t, rng.standard_normal(n), sched)
            if t in (1, 500, 1000):
                target = 1.0 - sched.alpha_bar(t)
                sigma = target * math.sqrt(2.0 / (n - 1))
                var = float(z.var(ddof=1))
                details.append(f"t={t}: {abs(var - target) / sigma:.2f} sigma")
                assert abs(var - target) <= 3 * sigma, details[-1]
        elapsed = time.perf_counter() - t0
        note["detail"] = ", ".join(details) + f", {elapsed:.1f}s"
        assert elapsed < 30


def test_ac6_sampler_inversion(acceptance):
    with acceptance.criterion("AC6 sampler inversion") as note:
        sched = diffusion.make_schedule(1000, "linear")
        rng = np.random.default_rng(606)
        z0 = rng.standard_normal((4, 8, 8))
        zT = diffusion.q_sample(z0, 1000, rng.standard_normal(z0.shape), sched)
        oracle = diffusion.oracle_denoiser(z0, sched)
        calls = []

        def counted(z, t, c=None):
            calls.append(t)
            return oracle(z, t)

        full = diffusion.sample(counted, zT, sched, steps=1000, eta=0.0)
        err = float(np.abs(full - z0).max())
        assert err <= 1e-6 and len(calls) == 1000
        calls.clear()
        diffusion.sample(counted, zT, sched, steps=50)
        assert len(calls) == 50
        assert inspect.signature(diffusion.sample).parameters["steps"].default == 50
        note["detail"] = f"steps=T error {err:.1e}; 50-step run made {len(calls)} calls"


def test_ac7_gradient_check(acceptance):
    with acceptance.criterion("AC7 IPI gradient check") as note:
        t0 = time.perf_counter()
        parts = []
        for d, depth, heads in ((4, 1, 1), (8, 2, 2)):
            cfg = ipi.IPIConfig(depth=depth, model_dim=d, num_heads=heads)
            rep = ipi.gradcheck(cfg, seed=0, step=1e-5, tolerance=1e-5)
            name, worst = rep.worst()
            parts.append(f"d={d},N={depth},h={heads}: worst {worst:.1e} ({name})")
            assert set(ipi.tensor_shapes(cfg)) <= set(rep.max_rel_error)
            assert rep.passed, parts[-1]
        elapsed = time.perf_counter() - t0
        note["detail"] = "; ".join(parts) + f"; {elapsed:.1f}s"
        assert elapsed < 60


def test_ac8_structural_invariants(acceptance):
    with acceptance.criterion("AC8 IPI structural invariants") as note:
        rng = np.random.default_rng(808)
        w = {k: rng.normal(size=(8, 8)) for k in ipi.ATTN_KEYS}
        Q, KV = rng.normal(size=(18, 8)), rng.normal(size=(6, 8))
        row_err = max(np.abs(p.sum(axis=1) - 1).max() for p in ipi.attention_weights(Q, KV, w, 2))
        perm = rng.permutation(6)
        perm_err = np.abs(ipi.cross_attention(Q, KV[perm], w, 2) - ipi.cross_attention(Q, KV, w, 2)).max()
        cfg = ipi.IPIConfig(depth=2, model_dim=8, num_heads=2)
        params = ipi.init_params(cfg, 1, randomize_all=True)
        perm_err = max(perm_err, np.abs(ipi.ipi_forward(Q, KV[perm], params) - ipi.ipi_forward(Q, KV, params)).max())
        assert row_err <= 1e-12 and perm_err <= 1e-12
        assert np.array_equal(ipi.motion_attention(Q, KV, w, 2, alpha=0.0), Q)
        assert inspect.signature(ipi.motion_attention).parameters["alpha"].default == 1.0
        default = ipi.motion_attention(Q, KV, w, 2)
        assert np.allclose(default, Q + ipi.cross_attention(Q, KV, w, 2), atol=1e-14)
        note["detail"] = f"row sums {row_err:.1e}, K/V permutation {perm_err:.1e}, alpha=0 exact, default alpha=1"


def test_ac9_metric_identities(acceptance):
    with acceptance.criterion("AC9 metrics identities") as note:
        rng = np.random.default_rng(909)
        x = rng.uniform(size=(24, 24, 3))
        assert metrics.l1(x, x) == 0.0
        assert metrics.psnr_star([x, x], [x, x]) == pytest.approx(100.0, abs=1e-9)
        assert abs(metrics.ssim(x, x) - 1.0) <= 1e-12
        p = metrics.gaussian_stats(rng.normal(size=(40, 5)))
        assert abs(metrics.frechet_distance(p, p)) <= 1e-8
        z = np.zeros((8, 8))
        a = metrics.psnr(z, np.full((8, 8), 0.5))
        b = metrics.psnr(z, np.full((8, 8), 0.1))
        f2 = metrics.frechet_distance(metrics.GaussianStats([0, 0], np.eye(2)),
                                      metrics.GaussianStats([0, 0], 4 * np.eye(2)))
        assert abs(a - 6.0206) <= 1e-4 and abs(a - 20 * math.log10(2)) <= 1e-6
        assert abs(b - 20.0) <= 1e-6
        assert abs(f2 - 2.0) <= 1e-6
        note["detail"] = f"psnr {a:.4f} / {b:.4f} dB, 2-D frechet {f2:.6f}"


def test_ac10_end_to_end(acceptance, tmp_path):
    with acceptance.criterion("AC10 end-to-end pipeline") as note:
        rng = np.random.default_rng(1010)
        corpus = write_corpus(tmp_path / "corpus", rng)
        pool = tmp_path / "pool.json"
        assert main(["--quiet", "pool", "build", "--in", str(corpus), "--out", str(pool)]) == 0

        only_drop = {"probabilities": {k: 0.0 for k in epi.OP_KINDS}}
        only_drop["probabilities"]["DropPart"] = 1.0
        seed = next(s for s in range(1000)
                    if epi.sample_plan(s, 1.0, epi.RescaleConfig.from_dict(only_drop), 3).ops
                    == (epi.RescaleOp("DropPart", part="left_arm"),))
        cfg = tmp_path / "drop.json"
        cfg.write_text(json.dumps({"rescale": only_drop}))

        src = corpus / "clip0.json"
        out, plan = tmp_path / "out.json", tmp_path / "plan.json"
        assert main(["--quiet", "--seed", str(seed), "--config", str(cfg), "transform", "--in", str(src),
                     "--pool", str(pool), "--lambda", "1", "--out", str(out), "--plan-out", str(plan)]) == 0
        ops = json.loads(plan.read_text())["ops"]
        assert [(o["kind"], o.get("part")) for o in ops] == [("DropPart", "left_arm")]

        svg_in, svg_out = tmp_path / "in.svg", tmp_path / "out.svg"
        assert main(["--quiet", "render", "--in", str(src), "--frame", "0", "--out", str(svg_in)]) == 0
        assert main(["--quiet", "render", "--in", str(out), "--frame", "0", "--out", str(svg_out)]) == 0
        n_in = count_elements(svg_in.read_text(), "line")
        n_out = count_elements(svg_out.read_text(), "line")
        assert len(parse_pose_sequence(out.read_bytes()).frames) == 12
        note["detail"] = f"seed {seed}: {n_in} lines in, {n_out} lines out"
        assert n_in - n_out == 3
