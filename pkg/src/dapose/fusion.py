"""Error-driven multi-view fusion.

Each view ``v`` gets a projection error ``e_proj`` (reprojection of its 3D
candidate against 2D evidence) and an absolute error ``e_abs`` (feature
distance to a reference), turned into a weight
``omega_v = 1 / (e_proj + e_abs + eps)``.  Weights are normalized to sum to
one by default; ``raw`` mode keeps them as they are and fuses with the bare
weighted sum.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from .geometry import CameraParams, Pose2D, Pose3D, backproject, project, rig_focus_point, triangulate_partial
from .skeleton import MultiViewSequence

REDUCTIONS = ("mean_abs", "mean_l2")
DEFAULT_EPSILON = 1e-6
FUSION_MODES = ("adaptive", "uniform", "none", "raw")
ESTIMATORS = ("pairs", "lift")


class NoVisibleJointsError(ValueError):
    """The error is undefined because no joint is visible in both poses."""


@dataclass(eq=False)
class ViewFeature:
    view_id: int
    payload: np.ndarray

    def __post_init__(self):
        if isinstance(self.payload, Pose3D):
            self.payload = self.payload.joints
        self.payload = np.asarray(self.payload, dtype=np.float64)

    def as_pose(self) -> Pose3D:
        return Pose3D(self.payload)


@dataclass(eq=False)
class FusionWeights:
    omega: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=np.float64).reshape(-1)


@dataclass(eq=False)
class ErrorBreakdown:
    e_proj: np.ndarray
    e_abs: np.ndarray
    e_mid: np.ndarray = field(default_factory=lambda: np.zeros(0))
    epsilon: float = DEFAULT_EPSILON

    @property
    def total(self) -> float:
        return total_error(float(np.sum(self.e_proj)), float(np.sum(self.e_abs)), float(np.sum(self.e_mid)))


def _payload(x) -> np.ndarray:
    if isinstance(x, ViewFeature):
        return x.payload
    if isinstance(x, Pose3D):
        return x.joints
    return np.asarray(x, dtype=np.float64)


def _reduce(diff: np.ndarray, reduction: str) -> float:
    """Reduce a difference array whose last axis holds coordinates."""
    if reduction == "mean_abs":
        return float(np.mean(np.abs(diff)))
    if reduction == "mean_l2":
        rows = diff.reshape(-1, diff.shape[-1]) if diff.ndim > 1 else diff.reshape(1, -1)
        return float(np.mean(np.linalg.norm(rows, axis=1)))
    raise ValueError(f"unknown reduction {reduction!r}; choose from {REDUCTIONS}")


def projection_error(
    candidate: Pose3D,
    cam: CameraParams,
    observed: Pose2D,
    reduction: str = "mean_abs",
) -> float:
    """Discrepancy between ``candidate`` projected into ``cam`` and ``observed``.

    Only joints visible in both the projection and the observation count
    (non-finite candidate joints project as invisible).
    """
    if candidate.joint_count != observed.joint_count:
        raise ValueError("candidate and observation joint counts differ")
    proj = project(candidate, cam)
    both = proj.visibility & observed.visibility & np.all(np.isfinite(observed.joints), axis=1)
    if not np.any(both):
        raise NoVisibleJointsError("no mutually visible joints")
    return _reduce(proj.joints[both] - observed.joints[both], reduction)


def absolute_error(f_v, f_ref, reduction: str = "mean_abs") -> float:
    """Elementwise discrepancy between a view feature and the reference feature.

    Rows (last axis = coordinates) that are non-finite in either payload are
    skipped, so partially estimated poses can be compared.
    """
    a, b = _payload(f_v), _payload(f_ref)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    if diff.ndim > 1:
        keep = np.all(np.isfinite(diff.reshape(-1, diff.shape[-1])), axis=1)
        if not np.any(keep):
            raise NoVisibleJointsError("no finite rows to compare")
        diff = diff.reshape(-1, diff.shape[-1])[keep]
    return _reduce(diff, reduction)


def intermediate_error(stage_feature, reference_feature, reduction: str = "mean_abs") -> float:
    """Error of one intermediate stage output against the true feature."""
    return absolute_error(stage_feature, reference_feature, reduction)


def total_error(e_proj: float, e_abs: float, e_mid: float = 0.0) -> float:
    for name, value in (("e_proj", e_proj), ("e_abs", e_abs), ("e_mid", e_mid)):
        if not value >= 0:
            raise ValueError(f"{name} must be non-negative, got {value}")
    return e_proj + e_abs + e_mid


def fusion_weights(
    e_proj: Sequence[float],
    e_abs: Sequence[float],
    epsilon: float = DEFAULT_EPSILON,
    normalize: bool = True,
) -> FusionWeights:
    """``omega_v = 1 / (e_proj_v + e_abs_v + epsilon)``, optionally normalized.

    An infinite error gives weight 0 (a view with nothing to contribute).
    """
    p = np.asarray(e_proj, dtype=np.float64).reshape(-1)
    a = np.asarray(e_abs, dtype=np.float64).reshape(-1)
    if p.shape != a.shape:
        raise ValueError(f"length mismatch: {p.shape[0]} projection vs {a.shape[0]} absolute errors")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if np.any(np.isnan(p)) or np.any(np.isnan(a)) or np.any(p < 0) or np.any(a < 0):
        raise ValueError("errors must be non-negative")
    omega = 1.0 / (p + a + epsilon)
    if normalize:
        total = omega.sum()
        if not total > 0:
            raise ValueError("every view has infinite error; weights cannot be normalized")
        omega = omega / total
    return FusionWeights(omega, normalize)


def uniform_weights(views: int) -> FusionWeights:
    return FusionWeights(np.full(views, 1.0 / views), True)


def fuse(features: Sequence[ViewFeature], weights: FusionWeights, raw: bool = False) -> ViewFeature:
    """Weighted sum of view features.

    With normalized weights and complete payloads this is the convex
    combination ``sum_v omega_v f_v``.  Payload entries that are NaN (a
    joint a view could not estimate) are left out and the remaining weights
    are renormalized per entry; an entry missing from every view stays NaN.
    ``raw=True`` accepts unnormalized weights and returns the literal sum,
    treating missing entries as zero.
    """
    if len(features) == 0:
        raise ValueError("nothing to fuse")
    omega = weights.omega
    if len(features) != omega.shape[0]:
        raise ValueError(f"{len(features)} features for {omega.shape[0]} weights")
    if not raw:
        if not weights.normalized:
            raise ValueError("unnormalized weights need raw=True")
        if abs(omega.sum() - 1.0) > 1e-9:
            raise ValueError(f"normalized weights must sum to 1, got {omega.sum()!r}")
    stack = np.stack([_payload(f) for f in features])
    shape = stack.shape[1:]
    if any(_payload(f).shape != shape for f in features):
        raise ValueError("all payloads must share one shape")
    finite = np.isfinite(stack)
    w = omega.reshape((-1,) + (1,) * len(shape))
    if raw:
        fused = np.sum(w * np.where(finite, stack, 0.0), axis=0)
    elif finite.all():
        fused = np.tensordot(omega, stack, axes=1)
    else:
        num = np.sum(w * np.where(finite, stack, 0.0), axis=0)
        den = np.sum(w * finite, axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            fused = np.where(den > 0, num / den, np.nan)
    return ViewFeature(-1, fused)


def _pair_strength(points: np.ndarray, ca: np.ndarray, cb: np.ndarray) -> np.ndarray:
    # sin^2 of the angle between the two viewing rays, ~ inverse depth variance
    ra = points - ca
    rb = points - cb
    cross = np.linalg.norm(np.cross(ra, rb), axis=1)
    denom = np.linalg.norm(ra, axis=1) * np.linalg.norm(rb, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(denom > 0, cross / denom, 0.0)
    return s * s


def view_candidates(frame: Sequence[tuple[Pose2D, CameraParams]], estimator: str = "pairs") -> list[np.ndarray]:
    """One 3D candidate per view, NaN where the view cannot support a joint.

    ``pairs``: the candidate of view ``v`` averages the two-view
    triangulations of ``v`` with every other view (each unordered pair is
    solved once), weighting each pair per joint by the squared sine of the
    angle between its rays so near-collinear pairs contribute little.  ``lift``: the view's joints are back-projected onto the
    plane through the rig focus point.
    """
    n = len(frame)
    n_joints = frame[0][0].joint_count
    if estimator == "lift":
        return [lift_view(obs, cam, [c for _, c in frame]) for obs, cam in frame]
    if estimator != "pairs":
        raise ValueError(f"unknown estimator {estimator!r}; choose from {ESTIMATORS}")
    sums = np.zeros((n, n_joints, 3))
    counts = np.zeros((n, n_joints))
    for a, b in combinations(range(n), 2):
        pts = triangulate_partial([frame[a], frame[b]]).joints
        ok = np.all(np.isfinite(pts), axis=1)
        filled = np.where(ok[:, None], pts, 0.0)
        w = np.where(ok, _pair_strength(filled, frame[a][1].center, frame[b][1].center), 0.0)
        for v in (a, b):
            sums[v] += w[:, None] * filled
            counts[v] += w
    with np.errstate(invalid="ignore", divide="ignore"):
        cands = sums / counts[..., None]
    cands[~(counts > 0)] = np.nan
    return [cands[v] for v in range(n)]


def lift_view(obs: Pose2D, cam: CameraParams, rig: Sequence[CameraParams]) -> np.ndarray:
    focus = rig_focus_point(rig)
    depth = float((cam.rotation @ focus + cam.translation)[2])
    return backproject(obs, cam, depth).joints


@dataclass(eq=False)
class FrameEstimate:
    pose: Pose3D
    weights: FusionWeights | None
    errors: ErrorBreakdown | None


def estimate_frame(
    frame: Sequence[tuple[Pose2D, CameraParams]],
    fusion: str = "adaptive",
    mode: str = "inference",
    estimator: str = "pairs",
    reduction: str = "mean_abs",
    epsilon: float = DEFAULT_EPSILON,
    ground_truth: Pose3D | None = None,
    reference_view: int = 0,
) -> FrameEstimate:
    """Estimate one frame's 3D pose.

    ``adaptive`` weights each view's candidate by its reprojection error
    against that view's 2D evidence plus (in training mode) its absolute
    error against the ground-truth pose.  The 2D evidence is the observed
    pose at inference and the projected ground truth in training.
    ``uniform`` averages candidates, ``raw`` uses unnormalized adaptive
    weights in the literal weighted sum, and ``none`` lifts the single
    ``reference_view``.  Joints no candidate covers fall back to the mean
    single-view lift over the views that see them, then to the rig focus
    point.
    """
    if fusion not in FUSION_MODES:
        raise ValueError(f"unknown fusion mode {fusion!r}; choose from {FUSION_MODES}")
    if mode not in ("inference", "training"):
        raise ValueError("mode must be 'inference' or 'training'")
    n = len(frame)
    rig = [cam for _, cam in frame]
    if fusion == "none":
        obs, cam = frame[reference_view]
        return FrameEstimate(_fill(lift_view(obs, cam, rig), frame, []), None, None)
    if n < 2:
        raise ValueError("multi-view fusion needs at least 2 views")

    cands = view_candidates(frame, estimator)
    notes: list[str] = []
    training = mode == "training" and ground_truth is not None
    e_proj = np.empty(n)
    e_abs = np.zeros(n)
    for v, (obs, cam) in enumerate(frame):
        evidence = project(ground_truth, cam) if training else obs
        try:
            e_proj[v] = projection_error(Pose3D(cands[v]), cam, evidence, reduction)
            if training:
                e_abs[v] = absolute_error(cands[v], ground_truth, reduction)
        except NoVisibleJointsError:
            e_proj[v] = np.inf
            notes.append(f"view {v}: no candidate joints, weight 0")
    e_mid = np.zeros(0)
    if training:
        pre_fusion = fuse([ViewFeature(v, c) for v, c in enumerate(cands)], uniform_weights(n)).payload
        if np.any(np.isfinite(pre_fusion)):
            e_mid = np.array([intermediate_error(pre_fusion, ground_truth, reduction)])
    errors = ErrorBreakdown(e_proj, e_abs, e_mid, epsilon)

    features = [ViewFeature(v, c) for v, c in enumerate(cands)]
    if fusion == "uniform":
        weights = uniform_weights(n)
    elif np.all(np.isinf(e_proj)):
        weights = uniform_weights(n)
        notes.append("no view produced a candidate; uniform weights")
    else:
        weights = fusion_weights(e_proj, e_abs, epsilon, normalize=fusion != "raw")
    fused = fuse(features, weights, raw=fusion == "raw").payload
    return FrameEstimate(_fill(fused, frame, notes), weights, errors)


def _fill(joints: np.ndarray, frame, notes: list[str]) -> Pose3D:
    joints = joints.copy()
    missing = ~np.all(np.isfinite(joints), axis=1)
    if np.any(missing):
        rig = [cam for _, cam in frame]
        lifts = np.stack([lift_view(obs, cam, rig) for obs, cam in frame])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            mean_lift = np.nanmean(lifts, axis=0)
        focus = rig_focus_point(rig)
        for j in np.flatnonzero(missing):
            if np.all(np.isfinite(mean_lift[j])):
                joints[j] = mean_lift[j]
                notes.append(f"joint {j}: single-view lift fallback")
            else:
                joints[j] = focus
                notes.append(f"joint {j}: unseen, placed at rig focus point")
    return Pose3D(joints, warnings=tuple(notes))


@dataclass(eq=False)
class EstimateTrace:
    poses: list[Pose3D]
    weights: list[FusionWeights | None]
    errors: list[ErrorBreakdown | None]

    def weight_matrix(self) -> np.ndarray:
        """``T x V`` weights (NaN rows for frames without weights)."""
        v = next((w.omega.shape[0] for w in self.weights if w is not None), 0)
        return np.array([w.omega if w is not None else np.full(v, np.nan) for w in self.weights])


def estimate_sequence(mvs: MultiViewSequence, fusion: str = "adaptive", mode: str = "inference", **kw) -> EstimateTrace:
    gt = mvs.ground_truth
    out = [
        estimate_frame(mvs.frame(t), fusion, mode, ground_truth=gt.frames[t] if gt is not None else None, **kw)
        for t in range(mvs.frame_count)
    ]
    return EstimateTrace([e.pose for e in out], [e.weights for e in out], [e.errors for e in out])


def adaptive_estimate(mvs: MultiViewSequence, mode: str = "inference", **kw) -> EstimateTrace:
    """Per-frame adaptive fusion over a whole sequence."""
    if mvs.view_count < 2:
        raise ValueError("adaptive fusion needs at least 2 views")
    return estimate_sequence(mvs, "adaptive", mode, **kw)
