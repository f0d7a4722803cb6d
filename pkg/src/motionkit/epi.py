"""Explicit pose transformation: realignment to an anchor shape, rescale ops,
and probabilistic plan sampling.

One :class:`TransformPlan` is drawn per sequence and applied identically to
every frame, so temporal motion stays coherent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import AnchorError, ArgumentError, PoolError, SchemaError, TopologyError
from .pose_model import (
    L_ANKLE, L_ELBOW, L_HIP, L_KNEE, L_SHOULDER, L_WRIST, MIN_CONFIDENCE, NECK, NOSE,
    NUM_BODY, R_ANKLE, R_ELBOW, R_HIP, R_KNEE, R_SHOULDER, R_WRIST, R_EYE, L_EYE, R_EAR,
    L_EAR, TOPOLOGY, FullPose, PoseSequence, SkeletonTopology, torso_length,
)
from .rng import SplitMix64

SCALE_KINDS = ("ScaleBody", "ScaleShoulder", "ScaleNeck", "ScaleFace", "ScaleArm", "ScaleLeg")
PART_KINDS = ("DropPart", "AddPart")
OP_KINDS = SCALE_KINDS + PART_KINDS
PARTS = ("left_arm", "right_arm", "left_leg", "right_leg")

PART_JOINTS = {
    "left_arm": (L_SHOULDER, L_ELBOW, L_WRIST),
    "right_arm": (R_SHOULDER, R_ELBOW, R_WRIST),
    "left_leg": (L_HIP, L_KNEE, L_ANKLE),
    "right_leg": (R_HIP, R_KNEE, R_ANKLE),
}
PART_HAND = {"left_arm": "left_hand", "right_arm": "right_hand"}

# Bones whose length each length-scaling op multiplies; everything below them
# in the tree is carried along rigidly.
SCALED_BONES = {
    "ScaleBody": {(NECK, R_HIP), (NECK, L_HIP)},
    "ScaleShoulder": {(NECK, R_SHOULDER), (NECK, L_SHOULDER)},
    "ScaleNeck": {(NECK, NOSE)},
    "ScaleArm": {(R_SHOULDER, R_ELBOW), (R_ELBOW, R_WRIST),
                 (L_SHOULDER, L_ELBOW), (L_ELBOW, L_WRIST)},
    "ScaleLeg": {(R_HIP, R_KNEE), (R_KNEE, R_ANKLE), (L_HIP, L_KNEE), (L_KNEE, L_ANKLE)},
}

HEAD_BONES = ((NOSE, R_EYE), (NOSE, L_EYE), (R_EYE, R_EAR), (L_EYE, L_EAR))
FACE_JOINTS = (R_EYE, L_EYE, R_EAR, L_EAR)
# Group name -> body joint it is attached to.
ATTACH = {"face": NOSE, "left_hand": L_WRIST, "right_hand": R_WRIST}

DEFAULT_RANGES = {
    "ScaleBody": (0.7, 1.4),
    "ScaleShoulder": (0.6, 1.5),
    "ScaleNeck": (0.5, 2.0),
    "ScaleFace": (0.6, 1.8),
    "ScaleArm": (0.5, 1.5),
    "ScaleLeg": (0.4, 1.6),
}
DEFAULT_PROBABILITY = 0.25
DEFAULT_LAMBDA = 0.98


@dataclass(frozen=True)
class RescaleOp:
    kind: str
    factor: Optional[float] = None
    part: Optional[str] = None

    def __post_init__(self):
        if self.kind in SCALE_KINDS:
            if self.factor is None or not self.factor > 0 or self.part is not None:
                raise ArgumentError(f"{self.kind} needs a positive factor and no part")
        elif self.kind in PART_KINDS:
            if self.part not in PARTS or self.factor is not None:
                raise ArgumentError(f"{self.kind} needs a part in {PARTS} and no factor")
        else:
            raise ArgumentError(f"unknown op kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "factor": self.factor, "part": self.part}


@dataclass(frozen=True)
class RescaleConfig:
    probabilities: dict = field(default_factory=lambda: {k: DEFAULT_PROBABILITY for k in OP_KINDS})
    ranges: dict = field(default_factory=lambda: dict(DEFAULT_RANGES))

    def __post_init__(self):
        for k in OP_KINDS:
            p = self.probabilities.get(k)
            if p is None or not 0.0 <= p <= 1.0:
                raise ArgumentError(f"probability for {k} must be in [0, 1], got {p}")
        for k in SCALE_KINDS:
            r = self.ranges.get(k)
            if r is None or len(r) != 2 or not 0 < r[0] <= r[1]:
                raise ArgumentError(f"range for {k} must satisfy 0 < lo <= hi, got {r}")

    @classmethod
    def from_dict(cls, raw: dict) -> "RescaleConfig":
        """Overlay a (possibly partial) JSON mapping onto the defaults."""
        base = cls()
        probs = dict(base.probabilities)
        ranges = dict(base.ranges)
        unknown = set(raw) - {"probabilities", "ranges"}
        if unknown:
            raise ArgumentError(f"unknown rescale config keys {sorted(unknown)}")
        for k, v in raw.get("probabilities", {}).items():
            if k not in OP_KINDS:
                raise ArgumentError(f"unknown op kind {k!r}")
            probs[k] = float(v)
        for k, v in raw.get("ranges", {}).items():
            if k not in SCALE_KINDS:
                raise ArgumentError(f"unknown scale kind {k!r}")
            ranges[k] = (float(v[0]), float(v[1]))
        return cls(probs, ranges)


@dataclass(frozen=True)
class TransformPlan:
    seed: int
    lam: float
    applied: bool
    anchor_index: Optional[int] = None
    anchor_id: Optional[str] = None
    ops: tuple = ()

    def __post_init__(self):
        if not self.applied and (self.anchor_id is not None or self.ops):
            raise ArgumentError("an unapplied plan carries no anchor and no ops")

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "lambda": self.lam,
            "applied": self.applied,
            "anchor_id": self.anchor_id,
            "ops": [op.to_dict() for op in self.ops],
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text) -> "TransformPlan":
        doc = json.loads(text)
        try:
            ops = tuple(RescaleOp(o["kind"], o.get("factor"), o.get("part")) for o in doc["ops"])
            return cls(int(doc["seed"]), float(doc["lambda"]), bool(doc["applied"]),
                       None, doc["anchor_id"], ops)
        except KeyError as e:
            raise SchemaError(str(e.args[0]), "missing required field") from None


# ---------------------------------------------------------------------------
# realignment


def _check_topology(topology: SkeletonTopology):
    if len(topology.joint_names) != NUM_BODY or topology.root != NECK:
        raise TopologyError("realignment expects the 18-joint topology rooted at the neck")


def _bone_length(body, p, c, min_confidence):
    if body[p, 2] < min_confidence or body[c, 2] < min_confidence:
        return None
    return float(np.hypot(*(body[c, :2] - body[p, :2])))


def head_size(body: np.ndarray, min_confidence: float = MIN_CONFIDENCE) -> Optional[float]:
    """Mean visible nose-eye / eye-ear bone length."""
    lengths = [_bone_length(body, p, c, min_confidence) for p, c in HEAD_BONES]
    lengths = [L for L in lengths if L is not None]
    return float(np.mean(lengths)) if lengths else None


def _realign_body(drv, anchor, offset, order, parent, min_confidence):
    out = np.zeros((NUM_BODY, 3))
    root = order[0]
    if drv[root, 2] < min_confidence:
        return out
    out[root, :2] = drv[root, :2] + offset
    out[root, 2] = drv[root, 2]
    present = np.zeros(NUM_BODY, dtype=bool)
    present[root] = True
    for j in order[1:]:
        p = parent[j]
        if not present[p] or drv[j, 2] < min_confidence:
            continue
        v = drv[j, :2] - drv[p, :2]
        length = float(np.hypot(*v))
        target = _bone_length(anchor, p, j, min_confidence)
        if target is None:
            target = length
        out[j, :2] = out[p, :2] + (v * (target / length) if length > 0 else 0.0)
        out[j, 2] = drv[j, 2]
        present[j] = True
    return out


def _carry_group(points, drv_attach, out_attach, scale, min_confidence):
    """Move a satellite group with its attachment joint, scaling about it."""
    if points is None:
        return None
    out = np.array(points)
    if out_attach[2] < min_confidence:
        out[:, 2] = 0.0
        return out
    out[:, :2] = out_attach[:2] + scale * (points[:, :2] - drv_attach[:2])
    return out


def realign(driving: PoseSequence, anchor, topology: SkeletonTopology = TOPOLOGY,
            min_confidence: float = MIN_CONFIDENCE) -> PoseSequence:
    """Give the driving sequence the anchor's bone lengths, keeping its bone directions.

    Joints are rebuilt from the neck outward. The whole sequence is translated
    so that its first visible neck lands on the anchor's neck. A bone missing
    in the driving frame drops its child subtree; a bone missing in the anchor
    keeps the driving length.
    """
    _check_topology(topology)
    anchor = anchor.body if isinstance(anchor, FullPose) else np.asarray(anchor, dtype=np.float64)
    if anchor.shape != (NUM_BODY, 3):
        raise TopologyError(f"anchor must have shape ({NUM_BODY}, 3), got {anchor.shape}")
    if torso_length(anchor, min_confidence) is None:
        raise AnchorError("anchor needs a visible neck and at least one visible hip")

    offset = None
    for f in driving.frames:
        if f.body[NECK, 2] >= min_confidence:
            offset = anchor[NECK, :2] - f.body[NECK, :2]
            break
    order = topology.order()
    anchor_head = head_size(anchor, min_confidence)

    frames = []
    for f in driving.frames:
        drv = f.body
        if offset is None:
            body = np.zeros((NUM_BODY, 3))
        else:
            body = _realign_body(drv, anchor, offset, order, topology.parent, min_confidence)
        drv_head = head_size(drv, min_confidence)
        scale = anchor_head / drv_head if anchor_head and drv_head else 1.0
        groups = {
            name: _carry_group(getattr(f, name), drv[j], body[j], scale, min_confidence)
            for name, j in ATTACH.items()
        }
        frames.append(FullPose(body, **groups))
    return driving.with_frames(frames)


# ---------------------------------------------------------------------------
# rescale ops


def _scale_bones(f: FullPose, bones, factor, order, parent, min_confidence) -> FullPose:
    body = f.body
    vis = body[:, 2] >= min_confidence
    disp = np.zeros((NUM_BODY, 2))
    for j in order[1:]:
        p = parent[j]
        disp[j] = disp[p]
        if (p, j) in bones and vis[p] and vis[j]:
            disp[j] = disp[j] + (factor - 1.0) * (body[j, :2] - body[p, :2])
    new = np.array(body)
    new[vis, :2] = body[vis, :2] + disp[vis]
    groups = {}
    for name, j in ATTACH.items():
        pts = getattr(f, name)
        if pts is not None:
            pts = np.array(pts)
            pts[:, :2] = pts[:, :2] + disp[j]
        groups[name] = pts
    return FullPose(new, **groups)


def _scale_face(f: FullPose, factor, min_confidence) -> FullPose:
    body = f.body
    if body[NOSE, 2] < min_confidence:
        return f
    nose = body[NOSE, :2]
    new = np.array(body)
    for j in FACE_JOINTS:
        if body[j, 2] >= min_confidence:
            new[j, :2] = nose + factor * (body[j, :2] - nose)
    face = f.face
    if face is not None:
        face = np.array(face)
        face[:, :2] = nose + factor * (f.face[:, :2] - nose)
    return f.replace(body=new, face=face)


def _drop_part(f: FullPose, part) -> FullPose:
    body = np.array(f.body)
    body[list(PART_JOINTS[part]), 2] = 0.0
    changes = {"body": body}
    hand = PART_HAND.get(part)
    if hand and getattr(f, hand) is not None:
        pts = np.array(getattr(f, hand))
        pts[:, 2] = 0.0
        changes[hand] = pts
    return f.replace(**changes)


def _add_part(f: FullPose, part, topology, min_confidence) -> FullPose:
    body = f.body
    joints = list(PART_JOINTS[part])
    if (body[joints, 2] >= min_confidence).any() or body[NECK, 2] < min_confidence:
        return f
    template = topology.template
    torso = torso_length(body, min_confidence)
    scale = torso / torso_length(template) if torso else 1.0
    new = np.array(body)
    new[joints, :2] = body[NECK, :2] + scale * (template[joints, :2] - template[NECK, :2])
    new[joints, 2] = 1.0
    return f.replace(body=new)


def apply_rescale(seq: PoseSequence, op: RescaleOp, topology: SkeletonTopology = TOPOLOGY,
                  min_confidence: float = MIN_CONFIDENCE) -> PoseSequence:
    """Apply one rescale op with the same parameters to every frame."""
    if op.kind in SCALED_BONES:
        order, bones = topology.order(), SCALED_BONES[op.kind]
        fn = lambda f: _scale_bones(f, bones, op.factor, order, topology.parent, min_confidence)
    elif op.kind == "ScaleFace":
        fn = lambda f: _scale_face(f, op.factor, min_confidence)
    elif op.kind == "DropPart":
        fn = lambda f: _drop_part(f, op.part)
    else:
        fn = lambda f: _add_part(f, op.part, topology, min_confidence)
    return seq.with_frames(fn(f) for f in seq.frames)


# ---------------------------------------------------------------------------
# plans


def sample_plan(seed: int, lam: float, config: Optional[RescaleConfig] = None,
                pool_size: int = 1, anchor_ids=None) -> TransformPlan:
    """Draw one plan from a splitmix64 stream.

    Draw order: the apply coin, the anchor index, then for every op kind in
    :data:`OP_KINDS` an inclusion coin followed (if included) by a factor or
    part draw.
    """
    if pool_size < 1:
        raise PoolError("pose pool is empty")
    if not 0.0 <= lam <= 1.0:
        raise ArgumentError(f"lambda must be in [0, 1], got {lam}")
    config = config or RescaleConfig()
    rng = SplitMix64(seed)
    if not rng.next_float() < lam:
        return TransformPlan(seed, lam, False)
    index = rng.next_index(pool_size)
    ops = []
    for kind in OP_KINDS:
        if not rng.next_float() < config.probabilities[kind]:
            continue
        if kind in SCALE_KINDS:
            lo, hi = config.ranges[kind]
            ops.append(RescaleOp(kind, factor=rng.uniform(lo, hi)))
        else:
            ops.append(RescaleOp(kind, part=PARTS[rng.next_index(len(PARTS))]))
    anchor_id = anchor_ids[index] if anchor_ids is not None else str(index)
    return TransformPlan(seed, lam, True, index, anchor_id, tuple(ops))


def apply_plan(seq: PoseSequence, plan: TransformPlan, anchor=None,
               topology: SkeletonTopology = TOPOLOGY,
               min_confidence: float = MIN_CONFIDENCE) -> PoseSequence:
    """Realign to the anchor, then apply the plan's ops in order."""
    if not plan.applied:
        return seq
    if anchor is None:
        raise AnchorError("an applied plan needs an anchor pose")
    out = realign(seq, anchor, topology, min_confidence)
    for op in plan.ops:
        out = apply_rescale(out, op, topology, min_confidence)
    return out
