"""Seeded property suites run by ``motionkit verify``.

Each check returns a :class:`Check`; an exception inside a check counts as a
failure rather than aborting the suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import diffusion, epi, ipi, metrics
from .pose_model import MIN_CONFIDENCE, TOPOLOGY, serialize_pose_sequence
from .synthetic import random_anchor, random_sequence, rigid_sequence

SUITES = ("epi", "diffusion", "ipi", "metrics")


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


def _run(name: str, fn: Callable[[], tuple]) -> Check:
    try:
        ok, detail = fn()
    except Exception as e:  # noqa: BLE001 - any crash is a failed property
        return Check(name, False, f"{type(e).__name__}: {e}")
    return Check(name, bool(ok), detail)


def bone_angle_deviation(before, after, min_confidence=MIN_CONFIDENCE):
    """Worst angle (rad) between corresponding visible bones of two bodies."""
    worst = 0.0
    for p, c in TOPOLOGY.bones:
        if min(before[p, 2], before[c, 2], after[p, 2], after[c, 2]) < min_confidence:
            continue
        u = before[c, :2] - before[p, :2]
        v = after[c, :2] - after[p, :2]
        ang = abs(math.atan2(u[0] * v[1] - u[1] * v[0], u @ v))
        worst = max(worst, ang)
    return worst


def bone_angles(body, min_confidence=MIN_CONFIDENCE) -> np.ndarray:
    """Absolute angle of every bone (NaN where an endpoint is missing)."""
    out = np.full(len(TOPOLOGY.bones), np.nan)
    for i, (p, c) in enumerate(TOPOLOGY.bones):
        if body[p, 2] >= min_confidence and body[c, 2] >= min_confidence:
            out[i] = math.atan2(body[c, 1] - body[p, 1], body[c, 0] - body[p, 0])
    return out


def wrap_angle(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def motion_delta_change(before, after) -> float:
    """Worst change, over bones and frame pairs (0, k), of the signed inter-frame angle delta."""
    a0, b0 = bone_angles(before.frames[0].body), bone_angles(after.frames[0].body)
    worst = 0.0
    for fb, fa in zip(before.frames[1:], after.frames[1:]):
        d_in = wrap_angle(bone_angles(fb.body) - a0)
        d_out = wrap_angle(bone_angles(fa.body) - b0)
        diff = np.abs(wrap_angle(d_in - d_out))
        diff = diff[~np.isnan(diff)]
        if diff.size:
            worst = max(worst, float(diff.max()))
    return worst


def bone_length_deviation(out, anchor, min_confidence=MIN_CONFIDENCE):
    worst = 0.0
    for p, c in TOPOLOGY.bones:
        if min(out[p, 2], out[c, 2], anchor[p, 2], anchor[c, 2]) < min_confidence:
            continue
        a = np.hypot(*(out[c, :2] - out[p, :2]))
        b = np.hypot(*(anchor[c, :2] - anchor[p, :2]))
        worst = max(worst, abs(a - b))
    return worst


# ---------------------------------------------------------------------------


def epi_suite(seed: int = 0, pairs: int = 200) -> list[Check]:
    rng = np.random.default_rng(seed)

    def realign_contract():
        ang = length = 0.0
        for _ in range(pairs):
            seq = random_sequence(rng, frames=3, missing_prob=0.1)
            anchor = random_anchor(rng, missing_prob=0.1)
            out = epi.realign(seq, anchor)
            for f_in, f_out in zip(seq.frames, out.frames):
                ang = max(ang, bone_angle_deviation(f_in.body, f_out.body))
                length = max(length, bone_length_deviation(f_out.body, anchor))
        return ang < 1e-7 and length < 1e-9, f"angle={ang:.1e} length={length:.1e}"

    def idempotence():
        worst = 0.0
        for _ in range(20):
            seq = rigid_sequence(rng, frames=8)
            out = epi.realign(seq, seq.frames[0].body)
            for a, b in zip(seq.frames, out.frames):
                worst = max(worst, float(np.abs(a.body - b.body).max()))
        return worst < 1e-9, f"max_diff={worst:.1e}"

    def motion_preservation():
        worst = 0.0
        for _ in range(10):
            seq = rigid_sequence(rng, frames=32)
            out = epi.realign(seq, random_anchor(rng))
            worst = max(worst, motion_delta_change(seq, out))
        return worst < 1e-7, f"max_delta_change={worst:.1e}"

    def lambda_semantics():
        never = all(not epi.sample_plan(s, 0.0).applied for s in range(1000))
        always = all(epi.sample_plan(s, 1.0).applied for s in range(1000))
        frac = sum(epi.sample_plan(s, 0.98).applied for s in range(10000)) / 10000
        return never and always and 0.97 <= frac <= 0.99, f"applied@0.98={frac:.4f}"

    def unit_factor_identity():
        seq = random_sequence(rng, frames=3, with_groups=True)
        worst = 0.0
        for kind in epi.SCALE_KINDS:
            out = epi.apply_rescale(seq, epi.RescaleOp(kind, 1.0))
            for a, b in zip(seq.frames, out.frames):
                worst = max(worst, float(np.abs(a.body - b.body).max()))
        return worst < 1e-9, f"max_diff={worst:.1e}"

    def drop_then_add():
        seq = rigid_sequence(rng, frames=4)
        ok = True
        for part in epi.PARTS:
            out = epi.apply_rescale(epi.apply_rescale(seq, epi.RescaleOp("DropPart", part=part)),
                                    epi.RescaleOp("AddPart", part=part))
            joints = list(epi.PART_JOINTS[part])
            ok &= all((f.body[joints, 2] == 1.0).all() for f in out.frames)
        return ok, "parts restored"

    def determinism():
        seq = rigid_sequence(rng, frames=6)
        anchor = random_anchor(rng)
        outs = set()
        for _ in range(3):
            plan = epi.sample_plan(12345, 1.0, pool_size=5)
            outs.add(serialize_pose_sequence(epi.apply_plan(seq, plan, anchor)) + plan.to_json())
        return len(outs) == 1, "identical bytes"

    return [
        _run("epi.realign_contract", realign_contract),
        _run("epi.idempotence", idempotence),
        _run("epi.motion_preservation", motion_preservation),
        _run("epi.lambda_semantics", lambda_semantics),
        _run("epi.unit_factor_identity", unit_factor_identity),
        _run("epi.drop_then_add", drop_then_add),
        _run("epi.determinism", determinism),
    ]


def diffusion_suite(seed: int = 0, schedule: Optional[diffusion.NoiseSchedule] = None,
                    samples: int = 10000) -> list[Check]:
    sched = schedule if schedule is not None else diffusion.make_schedule(1000)
    rng = np.random.default_rng(seed)
    T = sched.T

    def monotone():
        sched.validate()
        recur = all(sched.alpha_bars[t] == sched.alphas[t] * sched.alpha_bars[t - 1]
                    for t in range(1, T))
        return recur and sched.alpha_bars[0] == sched.alphas[0], "strictly decreasing, recursion exact"

    def forward_marginal():
        worst = 0.0
        for t in sorted({1, max(T // 2, 1), T}):
            z0 = np.ones(samples)
            z = diffusion.q_sample(z0, t, rng.standard_normal(samples), sched)
            var = 1.0 - sched.alpha_bar(t)
            mean_z = math.sqrt(sched.alpha_bar(t))
            mean_err = abs(z.mean() - mean_z) / math.sqrt(var / samples)
            var_err = abs(z.var(ddof=1) - var) / (var * math.sqrt(2.0 / (samples - 1)))
            worst = max(worst, mean_err, var_err)
        return worst <= 3.0, f"worst_sigma={worst:.2f}"

    def inversion():
        z0 = rng.standard_normal((4, 8, 8))
        zT = diffusion.q_sample(z0, T, rng.standard_normal(z0.shape), sched)
        rec = diffusion.sample(diffusion.oracle_denoiser(z0, sched), zT, sched, steps=T)
        err = float(np.abs(rec - z0).max())
        return err <= 1e-6, f"max_err={err:.1e}"

    def sigma_consistency():
        worst = max(abs(diffusion.ddim_sigma(sched, t, t - 1, 1.0) - diffusion.ddpm_sigma(sched, t))
                    for t in range(1, T + 1))
        return worst < 1e-12, f"max_diff={worst:.1e}"

    return [
        _run("diffusion.schedule_monotone", monotone),
        _run("diffusion.forward_marginal", forward_marginal),
        _run("diffusion.ddim_inversion", inversion),
        _run("diffusion.sigma_consistency", sigma_consistency),
    ]


def ipi_suite(seed: int = 0) -> list[Check]:
    cfg = ipi.IPIConfig(depth=2, model_dim=8, num_heads=2, ffn_dim=16)
    params = ipi.init_params(cfg, seed, randomize_all=True)
    rng = np.random.default_rng(seed)
    attn = params.layer(0)
    q = rng.standard_normal((18, 8))
    kv = rng.standard_normal((7, 8))

    def softmax_rows():
        worst = max(float(np.abs(p.sum(axis=1) - 1).max())
                    for p in ipi.attention_weights(q, kv, attn, 2))
        return worst < 1e-12, f"max_dev={worst:.1e}"

    def permutation():
        a = ipi.cross_attention(q, kv, attn, 2)
        b = ipi.cross_attention(q, kv[rng.permutation(len(kv))], attn, 2)
        d = float(np.abs(a - b).max())
        return d < 1e-12, f"max_diff={d:.1e}"

    def alpha_zero():
        out = ipi.motion_attention(q, kv, attn, 2, alpha=0.0)
        return np.array_equal(out, q), "exact"

    def token_count():
        outs = [ipi.ipi_forward(q, rng.standard_normal((n, 8)), params).shape for n in (1, 5, 40)]
        return all(s == (18, 8) for s in outs), str(outs[0])

    def gradients():
        worst = 0.0
        for c in (ipi.IPIConfig(depth=1, model_dim=4, num_heads=1),
                  ipi.IPIConfig(depth=2, model_dim=8, num_heads=2)):
            rep = ipi.gradcheck(c, seed)
            worst = max(worst, rep.worst()[1])
        return worst < 1e-5, f"max_rel_err={worst:.1e}"

    return [
        _run("ipi.softmax_rows", softmax_rows),
        _run("ipi.kv_permutation", permutation),
        _run("ipi.alpha_zero_identity", alpha_zero),
        _run("ipi.token_count", token_count),
        _run("ipi.gradcheck", gradients),
    ]


def metrics_suite(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    a = rng.random((16, 16, 3))
    b = rng.random((16, 16, 3))

    def identities():
        feats = rng.standard_normal((50, 4))
        st = metrics.gaussian_stats(feats)
        ok = (metrics.l1(a, a) == 0.0 and metrics.psnr_star([a], [a]) == 100.0
              and abs(metrics.ssim(a, a) - 1) < 1e-12 and metrics.frechet_distance(st, st) < 1e-8)
        return ok, "l1=0 psnr*=100 ssim=1 fd=0"

    def closed_forms():
        z = np.zeros((12, 12))
        p1 = metrics.psnr(z, z + 0.5)
        p2 = metrics.psnr(z, z + 0.1)
        fd = metrics.frechet_distance(metrics.GaussianStats(np.zeros(2), np.eye(2)),
                                      metrics.GaussianStats(np.zeros(2), 4 * np.eye(2)))
        ok = abs(p1 - 10 * math.log10(4)) < 1e-6 and abs(p2 - 20) < 1e-6 and abs(fd - 2) < 1e-6
        return ok, f"psnr={p1:.4f},{p2:.4f} fd={fd:.6f}"

    def symmetry():
        fa = metrics.gaussian_stats(rng.standard_normal((30, 3)))
        fb = metrics.gaussian_stats(rng.standard_normal((30, 3)) + 1)
        d = max(abs(metrics.l1(a, b) - metrics.l1(b, a)), abs(metrics.psnr(a, b) - metrics.psnr(b, a)),
                abs(metrics.ssim(a, b) - metrics.ssim(b, a)),
                abs(metrics.frechet_distance(fa, fb) - metrics.frechet_distance(fb, fa)))
        return d <= 1e-9, f"max_asym={d:.1e}"

    return [
        _run("metrics.identities", identities),
        _run("metrics.closed_forms", closed_forms),
        _run("metrics.symmetry", symmetry),
    ]


def run_suites(names, seed: int = 0, schedule=None) -> list[Check]:
    checks = []
    for name in names:
        if name == "epi":
            checks += epi_suite(seed)
        elif name == "diffusion":
            checks += diffusion_suite(seed, schedule)
        elif name == "ipi":
            checks += ipi_suite(seed)
        elif name == "metrics":
            checks += metrics_suite(seed)
        else:
            raise ValueError(f"unknown suite {name!r}")
    return checks


def format_table(checks: list[Check]) -> str:
    width = max(len(c.name) for c in checks)
    lines = [f"{'PASS' if c.passed else 'FAIL'}  {c.name:<{width}}  {c.detail}" for c in checks]
    n_ok = sum(c.passed for c in checks)
    lines.append(f"{n_ok}/{len(checks)} checks passed")
    return "\n".join(lines)
