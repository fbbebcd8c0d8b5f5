"""Dataset JSON: cameras, sequences, per-view observations and deficiency tags.

Layout::

    {schema_version, meta: {toolkit, checksum},
     cameras: [{view_id, fx, fy, cx, cy, R (9, row-major), t (3), width, height}],
     sequences: [{action, frame_rate, rays: [[azimuth, elevation]...],
                  frames: [{t, joints_3d: [[x, y, z]...] | null,
                            views: [{view_id, joints_2d: [[u, v]...],
                                     visibility: [bool...],
                                     deficiency: {kind, params}}]}]}]}

Floats are written with ``repr`` precision so a round trip is lossless;
NaN pixel coordinates (joints behind a camera) are written as ``null``.
``meta.checksum`` is the SHA-256 of the canonical (sorted, compact) JSON
of the document without that field.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from typing import Sequence

import numpy as np

from .. import __version__
from ..geometry import CameraParams, Pose2D, Pose3D, RayEncoding
from ..skeleton import DeficiencyTag, MotionSequence, MultiViewSequence

SCHEMA_VERSION = 1


class DatasetError(ValueError):
    pass


class SchemaVersionError(DatasetError):
    pass


class ChecksumError(DatasetError):
    pass


def _f(x: float):
    x = float(x)
    return None if math.isnan(x) else x


def _unf(x) -> float:
    return math.nan if x is None else float(x)


def camera_to_dict(cam: CameraParams) -> dict:
    return {
        "view_id": cam.view_id,
        "fx": cam.focal[0],
        "fy": cam.focal[1],
        "cx": cam.principal[0],
        "cy": cam.principal[1],
        "R": [float(x) for x in cam.rotation.reshape(-1)],
        "t": [float(x) for x in cam.translation],
        "width": cam.image_size[0],
        "height": cam.image_size[1],
    }


def camera_from_dict(d: dict) -> CameraParams:
    return CameraParams(
        focal=(d["fx"], d["fy"]),
        principal=(d["cx"], d["cy"]),
        rotation=np.array(d["R"], dtype=np.float64).reshape(3, 3),
        translation=np.array(d["t"], dtype=np.float64),
        image_size=(d["width"], d["height"]),
        view_id=d["view_id"],
    )


def _sequence_to_dict(mvs: MultiViewSequence) -> dict:
    frames = []
    gt = mvs.ground_truth
    for t in range(mvs.frame_count):
        views = []
        for v, cam in enumerate(mvs.cameras):
            obs = mvs.observations[v][t]
            tag = mvs.deficiency[v][t]
            views.append(
                {
                    "view_id": cam.view_id,
                    "joints_2d": [[_f(a), _f(b)] for a, b in obs.joints],
                    "visibility": [bool(x) for x in obs.visibility],
                    "deficiency": {"kind": tag.kind, "params": tag.param_dict},
                }
            )
        joints = None if gt is None else [[float(c) for c in row] for row in gt.frames[t].joints]
        frames.append({"t": t, "joints_3d": joints, "views": views})
    return {
        "action": mvs.action,
        "frame_rate": float(mvs.frame_rate),
        "rays": [[r.azimuth, r.elevation] for r in mvs.rays],
        "frames": frames,
    }


def _sequence_from_dict(d: dict, cameras: list[CameraParams]) -> MultiViewSequence:
    n_views = len(cameras)
    observations = [[] for _ in range(n_views)]
    tags = [[] for _ in range(n_views)]
    gt_frames = []
    for frame in d["frames"]:
        if len(frame["views"]) != n_views:
            raise DatasetError(f"frame {frame['t']} has {len(frame['views'])} views, expected {n_views}")
        for v, view in enumerate(frame["views"]):
            joints = np.array([[_unf(a), _unf(b)] for a, b in view["joints_2d"]], dtype=np.float64)
            observations[v].append(Pose2D(joints.reshape(-1, 2), view["visibility"]))
            tags[v].append(DeficiencyTag(view["deficiency"]["kind"], dict(view["deficiency"]["params"])))
        if frame["joints_3d"] is not None:
            gt_frames.append(Pose3D(np.array(frame["joints_3d"], dtype=np.float64)))
    if gt_frames and len(gt_frames) != len(d["frames"]):
        raise DatasetError("ground truth must be present in every frame or none")
    gt = MotionSequence(gt_frames, d["frame_rate"], d["action"]) if gt_frames else None
    rays = [RayEncoding(float(a), float(e)) for a, e in d["rays"]]
    return MultiViewSequence(cameras, observations, rays, tags, gt, d["action"], d["frame_rate"])


def _digest(doc: dict) -> str:
    body = dict(doc)
    body["meta"] = {k: v for k, v in doc["meta"].items() if k != "checksum"}
    canonical = json.dumps(body, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return "sha256:" + hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def dumps_dataset(sequences: Sequence[MultiViewSequence], meta: dict | None = None) -> str:
    if not sequences:
        raise DatasetError("nothing to save")
    cameras = sequences[0].cameras
    for s in sequences[1:]:
        if len(s.cameras) != len(cameras) or not all(a.same_as(b) for a, b in zip(s.cameras, cameras)):
            raise DatasetError("all sequences in one dataset must share a camera rig")
    doc = {
        "schema_version": SCHEMA_VERSION,
        "meta": {"toolkit": f"dapose {__version__}", **(meta or {})},
        "cameras": [camera_to_dict(c) for c in cameras],
        "sequences": [_sequence_to_dict(s) for s in sequences],
    }
    doc["meta"]["checksum"] = _digest(doc)
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n"


def loads_dataset(text: str) -> list[MultiViewSequence]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ChecksumError(f"dataset is truncated or corrupt ({exc.msg})") from None
    if not isinstance(doc, dict) or "schema_version" not in doc:
        raise DatasetError("not a dataset document (no schema_version)")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"dataset schema_version {doc['schema_version']!r} is not supported (expected {SCHEMA_VERSION})"
        )
    stored = doc.get("meta", {}).get("checksum")
    if stored is None:
        raise ChecksumError("dataset has no checksum")
    if stored != _digest(doc):
        raise ChecksumError("dataset checksum mismatch")
    cameras = [camera_from_dict(c) for c in doc["cameras"]]
    return [_sequence_from_dict(s, cameras) for s in doc["sequences"]]


def save_datasets(sequences: Sequence[MultiViewSequence], path: str | os.PathLike, meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_dataset(sequences, meta))


def load_datasets(path: str | os.PathLike) -> list[MultiViewSequence]:
    with open(path, encoding="utf-8") as fh:
        return loads_dataset(fh.read())


def save_dataset(mvs: MultiViewSequence, path: str | os.PathLike) -> None:
    save_datasets([mvs], path)


def load_dataset(path: str | os.PathLike) -> MultiViewSequence:
    sequences = load_datasets(path)
    if len(sequences) != 1:
        raise DatasetError(f"{path} holds {len(sequences)} sequences; use load_datasets")
    return sequences[0]
