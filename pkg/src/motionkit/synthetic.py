"""Random skeletons and pose sequences for tests, verification and demos."""

from __future__ import annotations

import numpy as np

from .pose_model import (
    GROUP_SIZES, NECK, NUM_BODY, TOPOLOGY, FullPose, PoseSequence,
)


def random_lengths(rng: np.random.Generator, lo: float = 0.03, hi: float = 0.15) -> dict:
    return {bone: float(rng.uniform(lo, hi)) for bone in TOPOLOGY.bones}


def pose_from_angles(root, lengths: dict, angles: dict) -> np.ndarray:
    """Forward kinematics from the neck; angles are absolute, radians, y downward."""
    body = np.zeros((NUM_BODY, 3))
    body[NECK] = (root[0], root[1], 1.0)
    for j in TOPOLOGY.order()[1:]:
        p = TOPOLOGY.parent[j]
        bone = (p, j)
        th = angles[bone]
        body[j, :2] = body[p, :2] + lengths[bone] * np.array([np.cos(th), np.sin(th)])
        body[j, 2] = 1.0
    return body


def random_body(rng: np.random.Generator, missing_prob: float = 0.0) -> np.ndarray:
    lengths = random_lengths(rng)
    angles = {b: float(rng.uniform(-np.pi, np.pi)) for b in TOPOLOGY.bones}
    body = pose_from_angles(rng.uniform(0.3, 0.7, size=2), lengths, angles)
    return drop_random(rng, body, missing_prob)


def drop_random(rng, body, missing_prob):
    body = np.array(body)
    if missing_prob > 0:
        mask = rng.random(NUM_BODY) < missing_prob
        body[mask, 2] = 0.0
    # some visible-but-uncertain detections too
    body[body[:, 2] > 0, 2] = rng.uniform(0.5, 1.0, size=int((body[:, 2] > 0).sum()))
    return body


def random_group(rng, size, center, spread=0.03):
    pts = np.empty((size, 3))
    pts[:, :2] = center + rng.uniform(-spread, spread, size=(size, 2))
    pts[:, 2] = rng.uniform(0.5, 1.0, size=size)
    return pts


def rigid_sequence(rng: np.random.Generator, frames: int = 32, lengths: dict | None = None,
                   missing_prob: float = 0.0, with_groups: bool = False,
                   canvas=(512, 768), fps: float = 30.0) -> PoseSequence:
    """A skeleton with fixed bone lengths whose bone angles oscillate over time."""
    lengths = lengths or random_lengths(rng)
    base = {b: float(rng.uniform(-np.pi, np.pi)) for b in TOPOLOGY.bones}
    amp = {b: float(rng.uniform(0.0, 0.8)) for b in TOPOLOGY.bones}
    freq = {b: float(rng.uniform(0.05, 0.3)) for b in TOPOLOGY.bones}
    root0 = rng.uniform(0.35, 0.65, size=2)
    drift = rng.uniform(-0.003, 0.003, size=2)
    out = []
    for k in range(frames):
        angles = {b: base[b] + amp[b] * np.sin(freq[b] * k) for b in TOPOLOGY.bones}
        body = pose_from_angles(root0 + k * drift, lengths, angles)
        body = drop_random(rng, body, missing_prob)
        groups = {}
        if with_groups:
            attach = {"face": 0, "left_hand": 7, "right_hand": 4}
            for name, size in GROUP_SIZES.items():
                groups[name] = random_group(rng, size, body[attach[name], :2])
        out.append(FullPose(body, **groups))
    return PoseSequence(canvas[0], canvas[1], fps, tuple(out))


def random_sequence(rng: np.random.Generator, frames: int = 4, missing_prob: float = 0.1,
                    with_groups: bool = False) -> PoseSequence:
    """Independent random bodies per frame (no temporal structure)."""
    out = []
    for _ in range(frames):
        body = random_body(rng, missing_prob)
        groups = {}
        if with_groups:
            for name, size in GROUP_SIZES.items():
                groups[name] = random_group(rng, size, rng.uniform(0.2, 0.8, size=2))
        out.append(FullPose(body, **groups))
    return PoseSequence(512, 768, 30.0, tuple(out))


def random_anchor(rng: np.random.Generator, missing_prob: float = 0.0) -> np.ndarray:
    """A random body whose neck and hips are visible."""
    body = random_body(rng, missing_prob)
    body[[NECK, 8, 11], 2] = 1.0
    return body
