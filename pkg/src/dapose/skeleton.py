"""Synthetic skeletons, forward-kinematic motion, multi-view observations and rasters.

Motion presets
--------------
Each preset is a set of sinusoidal joint channels.  A channel rotates one
bone (and, through the kinematic chain, all of its descendants) about an
axis of its parent's frame by::

    angle(t) = offset + amplitude * s * (sin(2 pi f t + phase) - sin(phase) * anchored)

where ``s`` is a per-sequence amplitude jitter in ``[0.9, 1.1]`` and the
phase is shifted by a per-sequence random offset (both drawn from the
seed).  The angular rate of a channel is at most ``|amplitude| * 1.1 *
2 pi f``; every preset documents that bound as ``max_angular_speed``.
The root follows the same kind of sinusoid in translation and yaw, so
sequences stay inside the capture volume.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import rng as _rng
from .geometry import CameraParams, Pose2D, Pose3D, RayEncoding, project, view_ray_angles

H36M_NAMES = (
    "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
    "spine", "thorax", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
)  # fmt: skip
H36M_PARENTS = (0, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)
H36M_BONES = (0.0, 130.0, 450.0, 440.0, 130.0, 450.0, 440.0, 230.0, 250.0, 110.0, 120.0,
              150.0, 280.0, 250.0, 150.0, 280.0, 250.0)  # fmt: skip
# Rest directions in the body frame (facing +Y, right = +X, up = +Z).
H36M_REST = {
    "r_hip": (1, 0, 0), "l_hip": (-1, 0, 0),
    "r_knee": (0, 0, -1), "r_ankle": (0, 0, -1), "l_knee": (0, 0, -1), "l_ankle": (0, 0, -1),
    "spine": (0, 0, 1), "thorax": (0, 0, 1), "neck": (0, 0.25, 1), "head": (0, -0.1, 1),
    "l_shoulder": (-1, 0, 0.1), "r_shoulder": (1, 0, 0.1),
    "l_elbow": (0, 0, -1), "l_wrist": (0, 0, -1), "r_elbow": (0, 0, -1), "r_wrist": (0, 0, -1),
}  # fmt: skip
PELVIS_HEIGHT = 920.0
DEFAULT_FRAME_RATE = 50.0


class UnknownActionError(ValueError):
    pass


@dataclass(eq=False)
class SkeletonModel:
    """Kinematic tree.  ``rest_directions`` are unit vectors in the body frame."""

    parent: np.ndarray
    bone_lengths: np.ndarray
    joint_names: tuple[str, ...]
    rest_directions: np.ndarray

    def __post_init__(self):
        self.parent = np.asarray(self.parent, dtype=np.int64).reshape(-1)
        self.bone_lengths = np.asarray(self.bone_lengths, dtype=np.float64).reshape(-1)
        self.joint_names = tuple(self.joint_names)
        rest = np.asarray(self.rest_directions, dtype=np.float64).reshape(-1, 3)
        n = self.parent.shape[0]
        if n < 1 or self.parent[0] != 0:
            raise ValueError("joint 0 must be the root (its own parent)")
        if not (self.bone_lengths.shape[0] == len(self.joint_names) == rest.shape[0] == n):
            raise ValueError("parent, bone_lengths, joint_names and rest_directions must have equal length")
        for j in range(1, n):
            if not 0 <= self.parent[j] < j:
                raise ValueError(f"joint {j}: parent must precede the joint (got {self.parent[j]})")
            if not self.bone_lengths[j] > 0:
                raise ValueError(f"joint {j}: bone length must be positive")
        norms = np.linalg.norm(rest[1:], axis=1)
        if np.any(norms == 0):
            raise ValueError("rest directions must be non-zero")
        rest = rest.copy()
        rest[1:] /= norms[:, None]
        rest[0] = 0.0
        self.rest_directions = rest

    @property
    def joint_count(self) -> int:
        return self.parent.shape[0]

    def bones(self) -> list[tuple[int, int]]:
        return [(int(self.parent[j]), j) for j in range(1, self.joint_count)]

    def measure_bones(self, joints: np.ndarray) -> np.ndarray:
        """Bone lengths of a ``J x 3`` pose (entry 0 is 0)."""
        d = joints - joints[self.parent]
        return np.linalg.norm(d, axis=1)


def human36m_skeleton() -> SkeletonModel:
    rest = [(0, 0, 0)] + [H36M_REST[name] for name in H36M_NAMES[1:]]
    return SkeletonModel(np.array(H36M_PARENTS), np.array(H36M_BONES), H36M_NAMES, np.array(rest))


def chain_skeleton(joint_count: int, bone_length: float = 200.0) -> SkeletonModel:
    """Vertical chain of ``joint_count`` joints, used when ``J != 17``."""
    parents = [0] + list(range(joint_count - 1))
    bones = [0.0] + [bone_length] * (joint_count - 1)
    names = ["pelvis"] + [f"j{i}" for i in range(1, joint_count)]
    rest = [(0, 0, 0)] + [(0, 0, 1)] * (joint_count - 1)
    return SkeletonModel(np.array(parents), np.array(bones), tuple(names), np.array(rest))


@dataclass(frozen=True)
class Channel:
    joint: str
    axis: str  # "x", "y" or "z" of the parent frame
    amplitude: float
    frequency: float
    phase: float = 0.0
    offset: float = 0.0


@dataclass(frozen=True)
class MotionPreset:
    name: str
    channels: tuple[Channel, ...]
    root_sway: tuple[float, float, float] = (0.0, 0.0, 0.0)  # mm amplitude along x, y, z
    root_frequency: float = 0.0
    root_yaw: float = 0.0  # rad amplitude
    anchored: bool = False  # frame 0 is the rest pose

    @property
    def max_angular_speed(self) -> float:
        """Upper bound (rad/s) on the rate of every joint channel."""
        rates = [abs(c.amplitude) * 1.1 * 2 * np.pi * c.frequency for c in self.channels]
        rates.append(abs(self.root_yaw) * 1.1 * 2 * np.pi * self.root_frequency)
        return max(rates)


PRESETS: dict[str, MotionPreset] = {
    "walk": MotionPreset(
        "walk",
        (
            Channel("r_knee", "x", 0.45, 1.0, 0.0),
            Channel("l_knee", "x", 0.45, 1.0, np.pi),
            Channel("r_ankle", "x", 0.35, 1.0, -np.pi / 2, -0.35),
            Channel("l_ankle", "x", 0.35, 1.0, np.pi / 2, -0.35),
            Channel("r_elbow", "x", 0.35, 1.0, np.pi),
            Channel("l_elbow", "x", 0.35, 1.0, 0.0),
            Channel("r_wrist", "x", 0.2, 1.0, np.pi, 0.3),
            Channel("l_wrist", "x", 0.2, 1.0, 0.0, 0.3),
            Channel("spine", "z", 0.08, 1.0, 0.0),
        ),
        root_sway=(40.0, 500.0, 15.0),
        root_frequency=0.25,
        root_yaw=0.3,
    ),
    "sit": MotionPreset(
        "sit",
        (
            Channel("r_knee", "x", 0.6, 0.2, -np.pi / 2, 0.6),
            Channel("l_knee", "x", 0.6, 0.2, -np.pi / 2, 0.6),
            Channel("r_ankle", "x", 0.6, 0.2, np.pi / 2, -0.6),
            Channel("l_ankle", "x", 0.6, 0.2, np.pi / 2, -0.6),
            Channel("spine", "x", 0.2, 0.2, -np.pi / 2, 0.2),
            Channel("r_elbow", "x", 0.3, 0.2, -np.pi / 2, 0.3),
            Channel("l_elbow", "x", 0.3, 0.2, -np.pi / 2, 0.3),
        ),
        root_sway=(0.0, -120.0, 220.0),
        root_frequency=0.2,
    ),
    "wave": MotionPreset(
        "wave",
        (
            Channel("r_elbow", "y", 0.15, 0.5, 0.0, -2.4),
            Channel("r_wrist", "y", 0.6, 1.5, 0.0, 0.4),
            Channel("head", "z", 0.2, 0.5, 0.0),
            Channel("spine", "y", 0.05, 0.5, 0.0),
        ),
        root_sway=(30.0, 0.0, 0.0),
        root_frequency=0.5,
    ),
    "idle": MotionPreset(
        "idle",
        (
            Channel("spine", "x", 0.03, 0.3),
            Channel("head", "z", 0.15, 0.2),
            Channel("r_elbow", "x", 0.05, 0.3),
            Channel("l_elbow", "x", 0.05, 0.3),
        ),
        root_sway=(10.0, 10.0, 3.0),
        root_frequency=0.25,
        anchored=True,
    ),
}
ACTIONS = tuple(sorted(PRESETS))


def _axis_rotation(axis: str, angle: np.ndarray) -> np.ndarray:
    """Stack of rotations about a coordinate axis, shape ``(T, 3, 3)``."""
    c, s = np.cos(angle), np.sin(angle)
    out = np.zeros(angle.shape + (3, 3))
    i = "xyz".index(axis)
    a, b = [k for k in range(3) if k != i]
    out[..., i, i] = 1.0
    out[..., a, a] = c
    out[..., b, b] = c
    out[..., a, b] = -s
    out[..., b, a] = s
    if i == 1:  # keep the right-hand rule for rotations about y
        out[..., a, b], out[..., b, a] = s, -s
    return out


@dataclass(eq=False)
class MotionSequence:
    frames: list[Pose3D]
    frame_rate: float = DEFAULT_FRAME_RATE
    action_label: str = ""

    def __post_init__(self):
        if len(self.frames) < 1:
            raise ValueError("a motion sequence needs at least one frame")

    @property
    def length(self) -> int:
        return len(self.frames)

    def as_array(self) -> np.ndarray:
        return np.stack([f.joints for f in self.frames])


def generate_motion(
    model: SkeletonModel,
    action: str,
    frames: int,
    seed: int,
    frame_rate: float = DEFAULT_FRAME_RATE,
) -> MotionSequence:
    """Forward-kinematic motion for one preset.

    Channels naming joints absent from ``model`` are ignored, so custom
    skeletons simply move less.
    """
    if action not in PRESETS:
        raise UnknownActionError(f"unknown action {action!r}; choose from {', '.join(ACTIONS)}")
    if frames < 1:
        raise ValueError("frames must be >= 1")
    preset = PRESETS[action]
    gen = _rng.as_generator(seed)
    jitter = 1.0 + 0.1 * (2.0 * gen.random() - 1.0)
    phase_shift = 0.0 if preset.anchored else 2.0 * np.pi * gen.random()

    t = np.arange(frames, dtype=np.float64) / frame_rate
    n = model.joint_count
    local = np.broadcast_to(np.eye(3), (frames, n, 3, 3)).copy()
    index = {name: j for j, name in enumerate(model.joint_names)}

    def wave(amplitude, frequency, phase):
        ph = phase + phase_shift
        val = np.sin(2 * np.pi * frequency * t + ph)
        if preset.anchored:
            val = val - np.sin(ph)
        return amplitude * jitter * val

    for ch in preset.channels:
        j = index.get(ch.joint)
        if j is None or j == 0:
            continue
        angle = ch.offset + wave(ch.amplitude, ch.frequency, ch.phase)
        local[:, j] = local[:, j] @ _axis_rotation(ch.axis, angle)

    yaw = wave(preset.root_yaw, preset.root_frequency, 0.0)
    local[:, 0] = _axis_rotation("z", yaw)
    root = np.zeros((frames, 3))
    for k, amp in enumerate(preset.root_sway):
        root[:, k] = wave(amp, preset.root_frequency, k * np.pi / 2)
    root[:, 2] += PELVIS_HEIGHT

    glob = np.empty_like(local)
    pos = np.empty((frames, n, 3))
    glob[:, 0] = local[:, 0]
    pos[:, 0] = root
    for j in range(1, n):
        p = model.parent[j]
        glob[:, j] = glob[:, p] @ local[:, j]
        pos[:, j] = pos[:, p] + model.bone_lengths[j] * (glob[:, j] @ model.rest_directions[j])
    return MotionSequence([Pose3D(pos[i]) for i in range(frames)], float(frame_rate), action)


@dataclass(frozen=True)
class DeficiencyTag:
    """Per (view, frame) corruption record.  ``params`` is empty iff clean."""

    kind: str = "clean"
    params: tuple[tuple[str, float], ...] = ()

    KINDS = ("clean", "gaussian", "salt_pepper", "speckle", "missing", "occlusion")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown deficiency kind {self.kind!r}")
        params = self.params
        if isinstance(params, dict):
            params = tuple(sorted((str(k), float(v)) for k, v in params.items()))
            object.__setattr__(self, "params", params)
        if (self.kind == "clean") != (len(params) == 0):
            raise ValueError("params must be present exactly when kind is not 'clean'")
        degree = dict(params).get("degree")
        if degree is not None and not 0.0 <= degree <= 0.7:
            raise ValueError("occlusion degree must lie in [0, 0.7]")

    @property
    def param_dict(self) -> dict[str, float]:
        return dict(self.params)

    @classmethod
    def make(cls, kind: str, **params: float) -> "DeficiencyTag":
        return cls(kind, tuple(sorted((k, float(v)) for k, v in params.items())))


CLEAN = DeficiencyTag()


@dataclass(eq=False)
class MultiViewSequence:
    """``V x T`` keypoint observations of one performance.

    ``observations[v][t]`` and ``deficiency[v][t]`` are indexed view first,
    matching the ``V x T x ...`` data layout.
    """

    cameras: list[CameraParams]
    observations: list[list[Pose2D]]
    rays: list[RayEncoding]
    deficiency: list[list[DeficiencyTag]]
    ground_truth: MotionSequence | None = None
    action: str = ""
    frame_rate: float = DEFAULT_FRAME_RATE

    def __post_init__(self):
        v = len(self.cameras)
        if not (len(self.observations) == len(self.rays) == len(self.deficiency) == v):
            raise ValueError("cameras, observations, rays and deficiency must have one entry per view")
        t = len(self.observations[0]) if v else 0
        if any(len(row) != t for row in self.observations) or any(len(row) != t for row in self.deficiency):
            raise ValueError("every view must carry the same frame count")
        if self.ground_truth is not None and self.ground_truth.length != t:
            raise ValueError("ground truth length does not match observations")

    @property
    def view_count(self) -> int:
        return len(self.cameras)

    @property
    def frame_count(self) -> int:
        return len(self.observations[0])

    def frame(self, t: int) -> list[tuple[Pose2D, CameraParams]]:
        return [(self.observations[v][t], self.cameras[v]) for v in range(self.view_count)]


def sequence_centroid(seq: MotionSequence) -> np.ndarray:
    return seq.as_array().reshape(-1, 3).mean(axis=0)


def render_observations(
    seq: MotionSequence,
    rig: Sequence[CameraParams],
    pixel_noise_sigma: float,
    seed: int,
    sequence_index: int = 0,
) -> MultiViewSequence:
    """Project every frame into every camera and add isotropic pixel noise.

    Noise for cell ``(v, t)`` comes from the stream ``(seed, "render",
    sequence_index, v, t)``.
    """
    if len(rig) == 0:
        raise ValueError("rig must contain at least one camera")
    if pixel_noise_sigma < 0:
        raise ValueError("pixel_noise_sigma must be non-negative")
    target = sequence_centroid(seq)
    observations = []
    for v, cam in enumerate(rig):
        row = []
        for t, pose in enumerate(seq.frames):
            obs = project(pose, cam)
            if pixel_noise_sigma > 0:
                noise = _rng.stream(seed, "render", sequence_index, v, t).normal(
                    0.0, pixel_noise_sigma, obs.joints.shape
                )
                obs = Pose2D(obs.joints + noise, obs.visibility)
            row.append(obs)
        observations.append(row)
    rays = [view_ray_angles(cam, target) for cam in rig]
    tags = [[CLEAN] * seq.length for _ in rig]
    return MultiViewSequence(list(rig), observations, rays, tags, seq, seq.action_label, seq.frame_rate)


@dataclass(eq=False)
class PixelGrid:
    """8-bit raster, ``data`` shaped ``(height, width, channels)``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError("pixel data must be H x W x {1,3}")
        if data.dtype != np.uint8:
            if np.any(data < 0) or np.any(data > 255):
                raise ValueError("pixel values must lie in [0, 255]")
            data = data.astype(np.uint8)
        self.data = np.ascontiguousarray(data)

    @classmethod
    def filled(cls, width: int, height: int, value: int = 255, channels: int = 1) -> "PixelGrid":
        return cls(np.full((height, width, channels), value, dtype=np.uint8))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def copy(self) -> "PixelGrid":
        return PixelGrid(self.data.copy())

    def __eq__(self, other):
        return isinstance(other, PixelGrid) and np.array_equal(self.data, other.data)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _line(x0: int, y0: int, x1: int, y1: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer Bresenham line including both endpoints."""
    xs, ys = [], []
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        xs.append(x0)
        ys.append(y0)
        if x0 == x1 and y0 == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy
    return np.array(xs), np.array(ys)


def rasterize_view(obs: Pose2D, model: SkeletonModel, size: tuple[int, int]) -> PixelGrid:
    """Stick figure on a white single-channel canvas.

    Joint coordinates are rounded half away from zero to pixel centres.
    Every visible joint is set to 0, then every bone whose two joints are
    visible is drawn with a 1-pixel Bresenham line.  Pixels outside the
    canvas are clipped.
    """
    w, h = int(size[0]), int(size[1])
    if w <= 0 or h <= 0:
        raise ValueError("raster size must be positive")
    img = np.full((h, w), 255, dtype=np.uint8)
    vis = obs.visibility & np.all(np.isfinite(obs.joints), axis=1)
    pix = np.zeros((obs.joint_count, 2), dtype=np.int64)
    pix[vis] = round_half_away(obs.joints[vis]).astype(np.int64)

    def plot(xs, ys):
        keep = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
        img[ys[keep], xs[keep]] = 0

    for j in np.flatnonzero(vis):
        plot(pix[j, :1], pix[j, 1:])
    for p, c in model.bones():
        if c < obs.joint_count and vis[p] and vis[c]:
            plot(*_line(pix[p, 0], pix[p, 1], pix[c, 0], pix[c, 1]))
    return PixelGrid(img)


def person_bbox(obs: Pose2D, size: tuple[int, int], margin: int = 10) -> tuple[int, int, int, int]:
    """Half-open ``(x0, y0, x1, y1)`` box around the visible joints, clipped to the image."""
    w, h = size
    vis = obs.visibility & np.all(np.isfinite(obs.joints), axis=1)
    if not np.any(vis):
        return 0, 0, w, h
    pts = obs.joints[vis]
    x0 = max(0, int(np.floor(pts[:, 0].min())) - margin)
    y0 = max(0, int(np.floor(pts[:, 1].min())) - margin)
    x1 = min(w, int(np.ceil(pts[:, 0].max())) + margin + 1)
    y1 = min(h, int(np.ceil(pts[:, 1].max())) + margin + 1)
    return x0, y0, x1, y1
