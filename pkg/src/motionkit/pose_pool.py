"""Anchor pose pool built from a corpus of pose sequence files."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import EmptyPoolError, IoError, PoolError, SchemaError
from .pose_model import (
    FORMAT_VERSION, MIN_CONFIDENCE, NUM_BODY, _fmt_points, load_json, parse_points,
    parse_pose_sequence, torso_length,
)

DEFAULT_STRIDE = 10


@dataclass(frozen=True, eq=False)
class PosePool:
    entries: tuple  # ((id, body array), ...) sorted by id
    source_manifest: tuple = ()

    def __post_init__(self):
        entries = tuple(sorted(((str(i), np.array(b, dtype=np.float64)) for i, b in self.entries),
                               key=lambda e: e[0]))
        ids = [i for i, _ in entries]
        if len(set(ids)) != len(ids):
            raise PoolError("pool ids must be unique")
        for i, body in entries:
            if body.shape != (NUM_BODY, 3):
                raise SchemaError(i, f"anchor must have {NUM_BODY} keypoints")
            if torso_length(body) is None:
                raise PoolError(f"anchor {i} lacks a visible neck and hip")
            body.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "source_manifest", tuple(sorted(map(str, self.source_manifest))))

    def __len__(self):
        return len(self.entries)

    @property
    def ids(self) -> list[str]:
        return [i for i, _ in self.entries]

    def get(self, anchor_id: str) -> np.ndarray:
        for i, body in self.entries:
            if i == anchor_id:
                return body
        raise KeyError(anchor_id)


def _read(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as e:
        raise IoError(path, e.strerror or str(e)) from None


def build_pool(sequence_files, frame_stride: int = DEFAULT_STRIDE,
               min_confidence: float = MIN_CONFIDENCE) -> PosePool:
    """Take every ``frame_stride``-th body pose whose torso is visible."""
    if frame_stride < 1:
        raise ValueError("frame_stride must be positive")
    entries = []
    for path in sequence_files:
        seq = parse_pose_sequence(_read(path))
        name = os.path.basename(os.fspath(path))
        for k in range(0, len(seq.frames), frame_stride):
            body = seq.frames[k].body
            if torso_length(body, min_confidence) is not None:
                entries.append((f"{name}#{k}", body))
    if not entries:
        raise EmptyPoolError("no usable anchor poses (need a visible neck and hip)")
    return PosePool(tuple(entries), tuple(map(os.fspath, sequence_files)))


def sample_anchor(pool: PosePool, index: int):
    """Return ``(id, body)`` at canonical position ``index``."""
    if not 0 <= index < len(pool.entries):
        raise IndexError(f"anchor index {index} out of range for pool of {len(pool.entries)}")
    return pool.entries[index]


def serialize_pool(pool: PosePool) -> str:
    lines = ["{", f'  "version": {FORMAT_VERSION},',
             f'  "source_manifest": {json.dumps(list(pool.source_manifest))},',
             '  "entries": [']
    for k, (i, body) in enumerate(pool.entries):
        sep = "," if k + 1 < len(pool.entries) else ""
        lines.append(f'    {{"id": {json.dumps(i)}, "body": {_fmt_points(body)}}}{sep}')
    lines += ["  ]", "}", ""]
    return "\n".join(lines)


def parse_pool(data) -> PosePool:
    doc = load_json(data, "pool document")
    if not isinstance(doc, dict):
        raise SchemaError("document", "top level must be an object")
    if doc.get("version") != FORMAT_VERSION:
        raise SchemaError("version", f"unsupported version {doc.get('version')!r}")
    raw = doc.get("entries")
    if not isinstance(raw, list):
        raise SchemaError("entries", "missing or not a list")
    entries = []
    for k, e in enumerate(raw):
        if not isinstance(e, dict) or not isinstance(e.get("id"), str):
            raise SchemaError(f"entries[{k}].id", "missing or not a string")
        entries.append((e["id"], parse_points(e.get("body"), NUM_BODY, f"entries[{k}].body")))
    if not entries:
        raise EmptyPoolError("pool file has no entries")
    return PosePool(tuple(entries), tuple(doc.get("source_manifest", ())))


def load_pool(path) -> PosePool:
    return parse_pool(_read(path))


def save_pool(pool: PosePool, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_pool(pool))

