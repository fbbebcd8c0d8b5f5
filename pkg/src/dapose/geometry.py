"""Calibrated pinhole cameras, projection, ray encoding and DLT triangulation.

Conventions
-----------
* World and camera frames are right-handed.  World ``+Z`` is up.
* ``x_cam = R @ x_world + t``; the camera looks along camera ``+z``, image
  ``u`` grows with camera ``+x`` and image ``v`` with camera ``+y`` (down).
* Lengths are millimetres, image coordinates are pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ORTHONORMAL_TOL = 1e-9
ILL_CONDITIONED = 1e10


class DegenerateRayError(ValueError):
    """Target coincides with the camera centre."""


class UnderdeterminedJointError(ValueError):
    """A joint is seen by fewer than two usable views."""

    def __init__(self, joint: int, usable: int):
        super().__init__(f"joint {joint} has {usable} usable view(s); triangulation needs at least 2")
        self.joint = joint
        self.usable = usable


def _check_rotation(rotation: np.ndarray, what: str = "rotation") -> None:
    if rotation.shape != (3, 3):
        raise ValueError(f"{what} must be 3x3, got {rotation.shape}")
    if not np.all(np.isfinite(rotation)):
        raise ValueError(f"{what} has non-finite entries")
    if np.max(np.abs(rotation @ rotation.T - np.eye(3))) > ORTHONORMAL_TOL:
        raise ValueError(f"{what} is not orthonormal")
    if abs(np.linalg.det(rotation) - 1.0) > ORTHONORMAL_TOL:
        raise ValueError(f"{what} must have determinant +1")


@dataclass(frozen=True, eq=False)
class CameraParams:
    """Pinhole camera with world-to-camera extrinsics."""

    focal: tuple[float, float]
    principal: tuple[float, float]
    rotation: np.ndarray
    translation: np.ndarray
    image_size: tuple[int, int]
    view_id: int = 0

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)
        object.__setattr__(self, "focal", (float(self.focal[0]), float(self.focal[1])))
        object.__setattr__(self, "principal", (float(self.principal[0]), float(self.principal[1])))
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))
        object.__setattr__(self, "view_id", int(self.view_id))

        _check_rotation(rotation)
        if not np.all(np.isfinite(translation)):
            raise ValueError("translation has non-finite entries")
        fx, fy = self.focal
        cx, cy = self.principal
        w, h = self.image_size
        if not (fx > 0 and fy > 0):
            raise ValueError(f"focal lengths must be positive, got {self.focal}")
        if not (0 <= cx < w and 0 <= cy < h):
            raise ValueError(f"principal point {self.principal} outside image {self.image_size}")

    @property
    def intrinsic_matrix(self) -> np.ndarray:
        fx, fy = self.focal
        cx, cy = self.principal
        return np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])

    @property
    def projection_matrix(self) -> np.ndarray:
        """3x4 matrix ``K [R | t]``."""
        return self.intrinsic_matrix @ np.hstack([self.rotation, self.translation[:, None]])

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.rotation.T @ self.translation

    def same_as(self, other: "CameraParams") -> bool:
        return (
            self.focal == other.focal
            and self.principal == other.principal
            and self.image_size == other.image_size
            and self.view_id == other.view_id
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )


@dataclass(eq=False)
class Pose3D:
    """``J x 3`` joint positions in world millimetres.

    ``warnings`` carries non-fatal diagnostics from the estimator that
    produced the pose (e.g. ill-conditioned triangulation).
    """

    joints: np.ndarray
    warnings: tuple[str, ...] = field(default=())

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64).reshape(-1, 3)
        if self.joints.shape[0] < 1:
            raise ValueError("a pose needs at least one joint")

    @property
    def joint_count(self) -> int:
        return self.joints.shape[0]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.joints)))


@dataclass(eq=False)
class Pose2D:
    """``J x 2`` pixel coordinates with per-joint visibility.

    Invisible joints keep whatever coordinates they had (out-of-frame
    projections stay usable for diagnostics); joints behind the camera are
    stored as NaN.  Error sums skip every invisible joint.
    """

    joints: np.ndarray
    visibility: np.ndarray

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64).reshape(-1, 2)
        self.visibility = np.asarray(self.visibility, dtype=bool).reshape(-1)
        if self.visibility.shape[0] != self.joints.shape[0]:
            raise ValueError("visibility length must match joint count")

    @property
    def joint_count(self) -> int:
        return self.joints.shape[0]

    def copy(self) -> "Pose2D":
        return Pose2D(self.joints.copy(), self.visibility.copy())


@dataclass(frozen=True)
class RayEncoding:
    azimuth: float
    elevation: float

    @property
    def encoded(self) -> np.ndarray:
        """``(sin az, cos az, sin el, cos el)``."""
        return np.array(
            [np.sin(self.azimuth), np.cos(self.azimuth), np.sin(self.elevation), np.cos(self.elevation)]
        )


def project(pose: Pose3D | np.ndarray, cam: CameraParams) -> Pose2D:
    """Project world joints into ``cam``.

    Joints with camera depth ``z <= 0`` become invisible NaNs.  Joints that
    land outside the ``[0, W) x [0, H)`` rectangle are marked invisible but
    keep their coordinates.
    """
    joints = pose.joints if isinstance(pose, Pose3D) else np.asarray(pose, dtype=np.float64).reshape(-1, 3)
    x_cam = joints @ cam.rotation.T + cam.translation
    z = x_cam[:, 2]
    in_front = z > 0
    fx, fy = cam.focal
    cx, cy = cam.principal
    uv = np.full((joints.shape[0], 2), np.nan)
    zf = z[in_front]
    uv[in_front, 0] = fx * x_cam[in_front, 0] / zf + cx
    uv[in_front, 1] = fy * x_cam[in_front, 1] / zf + cy
    w, h = cam.image_size
    with np.errstate(invalid="ignore"):
        inside = (uv[:, 0] >= 0) & (uv[:, 0] < w) & (uv[:, 1] >= 0) & (uv[:, 1] < h)
    return Pose2D(uv, in_front & inside)


def view_ray_angles(cam: CameraParams, target: Sequence[float]) -> RayEncoding:
    """Azimuth/elevation of the unit ray from the camera centre to ``target``.

    Azimuth is measured in the world XY plane from ``+X`` toward ``+Y`` and
    lies in ``(-pi, pi]``; elevation is measured from the XY plane.  A ray
    along the vertical axis gets azimuth 0.
    """
    d = np.asarray(target, dtype=np.float64).reshape(3) - cam.center
    norm = np.linalg.norm(d)
    if not norm > 1e-12 * max(1.0, float(np.linalg.norm(cam.center))):
        raise DegenerateRayError("target coincides with the camera centre")
    d = d / norm
    horizontal = np.hypot(d[0], d[1])
    if horizontal <= 1e-12:
        azimuth = 0.0
    else:
        azimuth = float(np.arctan2(d[1], d[0]))
        if azimuth == -np.pi:
            azimuth = np.pi
    elevation = float(np.arctan2(d[2], horizontal))
    return RayEncoding(azimuth, elevation)


def look_at(center: Sequence[float], target: Sequence[float], up: Sequence[float] = (0.0, 0.0, 1.0)):
    """Return ``(R, t)`` for a camera at ``center`` looking at ``target``."""
    center = np.asarray(center, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - center
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        raise ValueError("viewing direction is parallel to the up vector")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.vstack([right, down, forward])
    return rotation, -rotation @ center


def circular_rig(
    views: int = 4,
    radius: float = 4000.0,
    height: float = 1500.0,
    target: Sequence[float] = (0.0, 0.0, 900.0),
    focal: float = 1150.0,
    image_size: tuple[int, int] = (1000, 1000),
    start_angle: float = np.pi / 4,
) -> list[CameraParams]:
    """``views`` cameras evenly spaced on a horizontal ring, all aimed at ``target``."""
    if views < 1:
        raise ValueError("a rig needs at least one camera")
    target = np.asarray(target, dtype=np.float64)
    w, h = image_size
    rig = []
    for v in range(views):
        theta = start_angle + 2.0 * np.pi * v / views
        center = np.array([target[0] + radius * np.cos(theta), target[1] + radius * np.sin(theta), height])
        rotation, translation = look_at(center, target)
        rig.append(
            CameraParams(
                focal=(focal, focal),
                principal=(w / 2.0, h / 2.0),
                rotation=rotation,
                translation=translation,
                image_size=(w, h),
                view_id=v,
            )
        )
    return rig


def rig_focus_point(cams: Sequence[CameraParams]) -> np.ndarray:
    """Least-squares point closest to every optical axis.

    With a single camera the point one metre down its axis is returned.
    """
    if len(cams) == 1:
        c = cams[0]
        return c.center + 1000.0 * c.rotation[2]
    a = np.zeros((3, 3))
    b = np.zeros(3)
    for cam in cams:
        d = cam.rotation[2]
        m = np.eye(3) - np.outer(d, d)
        a += m
        b += m @ cam.center
    return np.linalg.solve(a, b)


def backproject(obs: Pose2D, cam: CameraParams, depth: float) -> Pose3D:
    """Place every visible joint on its viewing ray at camera depth ``depth``.

    This is the single-view lifting baseline: it has no depth information
    beyond the supplied plane.  Invisible joints come back as NaN.
    """
    fx, fy = cam.focal
    cx, cy = cam.principal
    x_cam = np.empty((obs.joint_count, 3))
    x_cam[:, 0] = (obs.joints[:, 0] - cx) / fx * depth
    x_cam[:, 1] = (obs.joints[:, 1] - cy) / fy * depth
    x_cam[:, 2] = depth
    world = (x_cam - cam.translation) @ cam.rotation
    world[~obs.visibility] = np.nan
    return Pose3D(world)


def triangulate(
    observations: Sequence[tuple[Pose2D, CameraParams]],
    weights: Sequence[float] | None = None,
    cond_threshold: float = ILL_CONDITIONED,
) -> Pose3D:
    """Linear (DLT) triangulation of every joint.

    Each usable view contributes the rows ``u P3 - P1`` and ``v P3 - P2``,
    multiplied by the view weight when ``weights`` is given.  A view is
    usable for a joint when the joint is visible there and the weight is
    positive.  The homogeneous system is column-equilibrated and solved by
    the right singular vector of the smallest singular value.

    Raises
    ------
    UnderdeterminedJointError
        If any joint has fewer than two usable views.
    """
    pose, counts = _dlt(observations, weights, cond_threshold)
    bad = np.flatnonzero(counts < 2)
    if bad.size:
        raise UnderdeterminedJointError(int(bad[0]), int(counts[bad[0]]))
    return pose


def triangulate_partial(
    observations: Sequence[tuple[Pose2D, CameraParams]],
    weights: Sequence[float] | None = None,
    cond_threshold: float = ILL_CONDITIONED,
) -> Pose3D:
    """Like :func:`triangulate`, but underdetermined joints come back as NaN."""
    return _dlt(observations, weights, cond_threshold)[0]


def _dlt(observations, weights, cond_threshold) -> tuple[Pose3D, np.ndarray]:
    if len(observations) == 0:
        raise ValueError("no observations")
    n_views = len(observations)
    if weights is None:
        w = np.ones(n_views)
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != n_views:
            raise ValueError(f"{w.shape[0]} weights for {n_views} views")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and non-negative")

    n_joints = observations[0][0].joint_count
    uv = np.empty((n_views, n_joints, 2))
    usable = np.empty((n_views, n_joints), dtype=bool)
    proj = np.empty((n_views, 3, 4))
    for v, (obs, cam) in enumerate(observations):
        if obs.joint_count != n_joints:
            raise ValueError("all views must carry the same joint count")
        uv[v] = obs.joints
        usable[v] = obs.visibility & np.all(np.isfinite(obs.joints), axis=1) & (w[v] > 0)
        proj[v] = cam.projection_matrix

    counts = usable.sum(axis=0)
    out = np.full((n_joints, 3), np.nan)
    notes: list[tuple[int, str]] = []
    patterns: dict[bytes, list[int]] = {}
    for j in np.flatnonzero(counts >= 2):
        patterns.setdefault(usable[:, j].tobytes(), []).append(int(j))

    for joint_ids in patterns.values():
        views = np.flatnonzero(usable[:, joint_ids[0]])
        joints = np.asarray(joint_ids)
        p = proj[views]  # (k, 3, 4)
        pts = uv[views][:, joints]  # (k, n, 2)
        wv = w[views][:, None, None]
        rows_u = pts[..., 0:1] * p[:, None, 2, :] - p[:, None, 0, :]  # (k, n, 4)
        rows_v = pts[..., 1:2] * p[:, None, 2, :] - p[:, None, 1, :]
        a = np.concatenate([rows_u * wv, rows_v * wv], axis=0).transpose(1, 0, 2)  # (n, 2k, 4)
        norms = np.linalg.norm(a, axis=1, keepdims=True)  # (n, 1, 4)
        scale = 1.0 / np.where(norms > 0, norms, 1.0)
        _, s, vt = np.linalg.svd(a * scale)
        xh = vt[:, -1, :] * scale[:, 0, :]
        cond = s[:, 0] / np.maximum(s[:, -2], np.finfo(float).tiny)
        for jj, c, h in zip(joints, cond, xh[:, 3]):
            if c > cond_threshold:
                notes.append((int(jj), f"joint {jj}: ill-conditioned triangulation (condition {c:.3g})"))
            if h == 0.0:
                notes.append((int(jj), f"joint {jj}: point at infinity"))
        with np.errstate(divide="ignore", invalid="ignore"):
            out[joints] = xh[:, :3] / xh[:, 3:4]

    notes.sort(key=lambda n: n[0])
    return Pose3D(out, warnings=tuple(n[1] for n in notes)), counts
