"""Skeletal pose data model: OpenPose-18 body plus optional face/hand groups.

Keypoints are stored as ``(n, 3)`` float64 arrays of ``[x, y, confidence]``
with x rightward and y downward, both normalized to the canvas. A keypoint
with confidence below :data:`MIN_CONFIDENCE` is treated as missing by every
geometric operation.
"""

from __future__ import annotations

import colorsys
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import ArgumentError, ParseError, SchemaError, TopologyError

MIN_CONFIDENCE = 0.3
NUM_BODY = 18
NUM_FACE = 68
NUM_HAND = 21
FORMAT_VERSION = 1

GROUP_SIZES = {"face": NUM_FACE, "left_hand": NUM_HAND, "right_hand": NUM_HAND}

JOINT_NAMES = (
    "nose", "neck",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_hip", "r_knee", "r_ankle",
    "l_hip", "l_knee", "l_ankle",
    "r_eye", "l_eye", "r_ear", "l_ear",
)

NOSE, NECK = 0, 1
R_SHOULDER, R_ELBOW, R_WRIST = 2, 3, 4
L_SHOULDER, L_ELBOW, L_WRIST = 5, 6, 7
R_HIP, R_KNEE, R_ANKLE = 8, 9, 10
L_HIP, L_KNEE, L_ANKLE = 11, 12, 13
R_EYE, L_EYE, R_EAR, L_EAR = 14, 15, 16, 17

# Bone order follows the usual OpenPose limb sequence; it also fixes palette colors.
BONES = (
    (NECK, R_SHOULDER), (NECK, L_SHOULDER),
    (R_SHOULDER, R_ELBOW), (R_ELBOW, R_WRIST),
    (L_SHOULDER, L_ELBOW), (L_ELBOW, L_WRIST),
    (NECK, R_HIP), (R_HIP, R_KNEE), (R_KNEE, R_ANKLE),
    (NECK, L_HIP), (L_HIP, L_KNEE), (L_KNEE, L_ANKLE),
    (NECK, NOSE),
    (NOSE, R_EYE), (R_EYE, R_EAR),
    (NOSE, L_EYE), (L_EYE, L_EAR),
)

_TEMPLATE_XY = {
    NOSE: (0.50, 0.15), NECK: (0.50, 0.25),
    R_SHOULDER: (0.41, 0.25), R_ELBOW: (0.41, 0.38), R_WRIST: (0.41, 0.51),
    L_SHOULDER: (0.59, 0.25), L_ELBOW: (0.59, 0.38), L_WRIST: (0.59, 0.51),
    R_HIP: (0.45, 0.50), R_KNEE: (0.45, 0.72), R_ANKLE: (0.45, 0.94),
    L_HIP: (0.55, 0.50), L_KNEE: (0.55, 0.72), L_ANKLE: (0.55, 0.94),
    R_EYE: (0.48, 0.13), L_EYE: (0.52, 0.13), R_EAR: (0.46, 0.14), L_EAR: (0.54, 0.14),
}


class Keypoint2D(NamedTuple):
    x: float
    y: float
    confidence: float


def _frozen(arr, rows: int, name: str) -> np.ndarray:
    a = np.array(arr, dtype=np.float64)
    if a.shape != (rows, 3):
        raise SchemaError(name, f"expected {rows} keypoints of [x, y, c], got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FullPose:
    """One frame: 18 body joints and optional face (68) and hands (21 each)."""

    body: np.ndarray
    face: Optional[np.ndarray] = None
    left_hand: Optional[np.ndarray] = None
    right_hand: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "body", _frozen(self.body, NUM_BODY, "body"))
        for name, size in GROUP_SIZES.items():
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, _frozen(value, size, name))

    def groups(self) -> tuple[str, ...]:
        return tuple(n for n in GROUP_SIZES if getattr(self, n) is not None)

    def replace(self, **changes) -> "FullPose":
        kw = {"body": self.body, "face": self.face,
              "left_hand": self.left_hand, "right_hand": self.right_hand}
        kw.update(changes)
        return FullPose(**kw)

    def keypoint(self, j: int) -> Keypoint2D:
        return Keypoint2D(*map(float, self.body[j]))


@dataclass(frozen=True, eq=False)
class PoseSequence:
    canvas_width: int
    canvas_height: int
    fps: float
    frames: tuple[FullPose, ...]

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.frames:
            raise SchemaError("frames", "sequence must contain at least one frame")
        if self.canvas_width <= 0 or self.canvas_height <= 0:
            raise SchemaError("canvas_width", "canvas dimensions must be positive")
        if not self.fps > 0:
            raise SchemaError("fps", "must be positive")
        groups = self.frames[0].groups()
        for i, f in enumerate(self.frames):
            if f.groups() != groups:
                raise SchemaError(f"frames[{i}]", "all frames must share the same optional groups")

    def __len__(self):
        return len(self.frames)

    def with_frames(self, frames) -> "PoseSequence":
        return PoseSequence(self.canvas_width, self.canvas_height, self.fps, tuple(frames))


@dataclass(frozen=True, eq=False)
class SkeletonTopology:
    joint_names: tuple[str, ...]
    parent: tuple[int, ...]  # -1 marks the root
    bones: tuple[tuple[int, int], ...]
    part_groups: dict
    template: np.ndarray = field(repr=False)

    @property
    def root(self) -> int:
        return self.parent.index(-1)

    def children(self, j: int) -> list[int]:
        return [c for p, c in self.bones if p == j]

    def order(self) -> list[int]:
        """Joints in breadth-first order from the root (parents before children)."""
        out = [self.root]
        for j in out:
            out.extend(self.children(j))
        return out

    def subtree(self, j: int) -> list[int]:
        out = [j]
        for k in out:
            out.extend(self.children(k))
        return out


def _build_topology() -> SkeletonTopology:
    parent = [-1] * NUM_BODY
    for p, c in BONES:
        parent[c] = p
    template = np.zeros((NUM_BODY, 3))
    for j, (x, y) in _TEMPLATE_XY.items():
        template[j] = (x, y, 1.0)
    template.setflags(write=False)
    part_groups = {
        "shoulders": frozenset({NECK, R_SHOULDER, L_SHOULDER}),
        "neck": frozenset({NECK, NOSE}),
        "face": frozenset({NOSE, R_EYE, L_EYE, R_EAR, L_EAR}),
        "arms": frozenset({R_SHOULDER, R_ELBOW, R_WRIST, L_SHOULDER, L_ELBOW, L_WRIST}),
        "legs": frozenset({R_HIP, R_KNEE, R_ANKLE, L_HIP, L_KNEE, L_ANKLE}),
        "torso": frozenset({NECK, R_HIP, L_HIP}),
    }
    return SkeletonTopology(JOINT_NAMES, tuple(parent), BONES, part_groups, template)


TOPOLOGY = _build_topology()


def visible(kp: np.ndarray, min_confidence: float = MIN_CONFIDENCE) -> np.ndarray:
    """Boolean mask of keypoints at or above ``min_confidence``."""
    return kp[..., 2] >= min_confidence


def bone_vector(pose, bone, topology: SkeletonTopology = TOPOLOGY,
                min_confidence: float = MIN_CONFIDENCE) -> Optional[tuple[float, float]]:
    """Child minus parent position, or ``None`` if either endpoint is missing."""
    bone = tuple(bone)
    if bone not in topology.bones:
        raise TopologyError(f"{bone} is not a bone of this topology")
    body = pose.body if isinstance(pose, FullPose) else np.asarray(pose)
    p, c = body[bone[0]], body[bone[1]]
    if p[2] < min_confidence or c[2] < min_confidence:
        return None
    return float(c[0] - p[0]), float(c[1] - p[1])


def torso_length(body: np.ndarray, min_confidence: float = MIN_CONFIDENCE) -> Optional[float]:
    """Neck to mid-hip distance; a single visible hip stands in for the midpoint."""
    if body[NECK, 2] < min_confidence:
        return None
    hips = [body[h, :2] for h in (R_HIP, L_HIP) if body[h, 2] >= min_confidence]
    if not hips:
        return None
    return float(np.hypot(*(np.mean(hips, axis=0) - body[NECK, :2])))


# ---------------------------------------------------------------------------
# JSON format


def _fmt(v: float) -> str:
    s = "%.9f" % v
    return "0.000000000" if s == "-0.000000000" else s


def _fmt_points(kp: Optional[np.ndarray]) -> str:
    if kp is None:
        return "null"
    return "[" + ", ".join(f"[{_fmt(x)}, {_fmt(y)}, {_fmt(c)}]" for x, y, c in kp) + "]"


def serialize_pose_sequence(seq: PoseSequence) -> str:
    """Deterministic JSON text; every real is written with 9 fractional digits."""
    lines = [
        "{",
        f'  "version": {FORMAT_VERSION},',
        f'  "canvas_width": {int(seq.canvas_width)},',
        f'  "canvas_height": {int(seq.canvas_height)},',
        f'  "fps": {_fmt(seq.fps)},',
        '  "frames": [',
    ]
    for i, f in enumerate(seq.frames):
        sep = "," if i + 1 < len(seq.frames) else ""
        lines.append(
            f'    {{"body": {_fmt_points(f.body)}, "face": {_fmt_points(f.face)}, '
            f'"left_hand": {_fmt_points(f.left_hand)}, "right_hand": {_fmt_points(f.right_hand)}}}{sep}'
        )
    lines += ["  ]", "}", ""]
    return "\n".join(lines)


def _reject_constant(name):
    raise ValueError(f"non-finite literal {name}")


def load_json(text, what: str = "document"):
    if isinstance(text, (bytes, bytearray)):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ParseError(f"{what} is not valid UTF-8: {e}") from None
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed {what}: {e.msg}", e.lineno, e.colno) from None
    except ValueError as e:
        raise ParseError(f"malformed {what}: {e}") from None


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def parse_points(raw, size: int, where: str) -> np.ndarray:
    if not isinstance(raw, list):
        raise SchemaError(where, "expected a list of [x, y, c] triples")
    if len(raw) != size:
        raise SchemaError(where, f"expected {size} keypoints, got {len(raw)}")
    out = np.empty((size, 3))
    for k, item in enumerate(raw):
        if not isinstance(item, list) or len(item) != 3 or not all(_is_number(v) for v in item):
            raise SchemaError(f"{where}[{k}]", "expected [x, y, c] numbers")
        x, y, c = (float(v) for v in item)
        if not 0.0 <= c <= 1.0:
            raise SchemaError("confidence", f"{where}[{k}] confidence {c} not in [0, 1]")
        if not (math.isfinite(x) and math.isfinite(y)):
            raise SchemaError(f"{where}[{k}]", "coordinates must be finite")
        out[k] = (x, y, c)
    return out


def _require(doc: dict, key: str, where: str = ""):
    if key not in doc:
        raise SchemaError(where + key, "missing required field")
    return doc[key]


def parse_pose_sequence(data) -> PoseSequence:
    """Parse the pose JSON document (``bytes`` or ``str``)."""
    doc = load_json(data, "pose document")
    if not isinstance(doc, dict):
        raise SchemaError("document", "top level must be an object")
    version = _require(doc, "version")
    if version != FORMAT_VERSION:
        raise SchemaError("version", f"unsupported version {version!r}")
    w, h, fps = _require(doc, "canvas_width"), _require(doc, "canvas_height"), _require(doc, "fps")
    for name, v in (("canvas_width", w), ("canvas_height", h)):
        if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
            raise SchemaError(name, "must be a positive integer")
    if not _is_number(fps) or not fps > 0:
        raise SchemaError("fps", "must be a positive number")
    raw_frames = _require(doc, "frames")
    if not isinstance(raw_frames, list) or not raw_frames:
        raise SchemaError("frames", "must be a non-empty list")
    frames = []
    for i, fr in enumerate(raw_frames):
        where = f"frames[{i}]"
        if not isinstance(fr, dict):
            raise SchemaError(where, "frame must be an object")
        body = parse_points(_require(fr, "body", where + "."), NUM_BODY, where + ".body")
        groups = {}
        for name, size in GROUP_SIZES.items():
            raw = fr.get(name)
            groups[name] = None if raw is None else parse_points(raw, size, f"{where}.{name}")
        frames.append(FullPose(body, **groups))
    return PoseSequence(w, h, float(fps), tuple(frames))


# ---------------------------------------------------------------------------
# SVG rendering


def palette(n: int = NUM_BODY) -> list[str]:
    """``n`` hues evenly spaced on the HSV wheel at full saturation and value."""
    cols = []
    for i in range(n):
        r, g, b = colorsys.hsv_to_rgb(i / n, 1.0, 1.0)
        cols.append("#%02x%02x%02x" % (round(r * 255), round(g * 255), round(b * 255)))
    return cols


def render_svg(pose: FullPose, canvas_width, canvas_height,
               min_confidence: float = MIN_CONFIDENCE) -> str:
    """Render body bones as lines and visible keypoints as circles.

    Face and hand keypoints are drawn as circles only, so the line count is
    always the number of visible body bones.
    """
    if canvas_width <= 0 or canvas_height <= 0:
        raise ArgumentError("canvas dimensions must be positive")
    W, H = canvas_width, canvas_height
    cols = palette()
    stroke = H / 120
    radius = H / 200

    def px(p):
        return f'{"%.3f" % (p[0] * W)}', f'{"%.3f" % (p[1] * H)}'

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="#000000"/>',
    ]
    body = pose.body
    for i, (a, b) in enumerate(TOPOLOGY.bones):
        if body[a, 2] >= min_confidence and body[b, 2] >= min_confidence:
            (x1, y1), (x2, y2) = px(body[a]), px(body[b])
            out.append(f'<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" stroke="{cols[i]}" '
                       f'stroke-width="{"%.3f" % stroke}" stroke-linecap="round"/>')
    for j in range(NUM_BODY):
        if body[j, 2] >= min_confidence:
            x, y = px(body[j])
            out.append(f'<circle cx="{x}" cy="{y}" r="{"%.3f" % radius}" fill="{cols[j]}"/>')
    for name in pose.groups():
        for p in getattr(pose, name):
            if p[2] >= min_confidence:
                x, y = px(p)
                out.append(f'<circle cx="{x}" cy="{y}" r="{"%.3f" % (radius / 2)}" fill="#ffffff"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def count_elements(svg: str, tag: str) -> int:
    return svg.count(f"<{tag} ")


def body_only(frames: Sequence[np.ndarray], canvas=(512, 768), fps=30.0) -> PoseSequence:
    """Convenience constructor for a body-only sequence."""
    return PoseSequence(canvas[0], canvas[1], fps, tuple(FullPose(b) for b in frames))
