"""MPJPE, Procrustes-aligned MPJPE and per-action aggregation."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .geometry import Pose3D

COLLINEAR_RATIO = 1e-9


class DegenerateAlignmentError(ValueError):
    """The ground-truth joints are (nearly) collinear, so the rotation is not determined."""


def _joints(p) -> np.ndarray:
    return p.joints if isinstance(p, Pose3D) else np.asarray(p, dtype=np.float64).reshape(-1, 3)


def mpjpe(pred, gt) -> float:
    """Mean Euclidean distance between corresponding joints (mm)."""
    p, g = _joints(pred), _joints(gt)
    if p.shape != g.shape:
        raise ValueError(f"joint count mismatch: {p.shape[0]} vs {g.shape[0]}")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(g))):
        raise ValueError("poses must be finite")
    return float(np.mean(np.sqrt(np.sum((p - g) ** 2, axis=1))))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * points @ self.rotation.T + self.translation


class Alignment(NamedTuple):
    transform: RigidTransform
    aligned: Pose3D


def procrustes_align(pred, gt, with_scale: bool = False) -> Alignment:
    """Rigid (optionally similarity) transform taking ``pred`` onto ``gt``.

    Minimizes ``sum_i |s R p_i + t - g_i|^2`` with ``det R = +1``: the SVD
    of the cross-covariance is sign-corrected on its smallest singular
    direction when the unconstrained optimum would be a reflection.
    """
    p, g = _joints(pred), _joints(gt)
    if p.shape != g.shape:
        raise ValueError(f"joint count mismatch: {p.shape[0]} vs {g.shape[0]}")
    if p.shape[0] < 3:
        raise DegenerateAlignmentError("alignment needs at least 3 joints")
    mu_p, mu_g = p.mean(axis=0), g.mean(axis=0)
    pc, gc = p - mu_p, g - mu_g
    sv = np.linalg.svd(gc, compute_uv=False)
    if not sv[1] >= COLLINEAR_RATIO * sv[0] or sv[0] == 0:
        raise DegenerateAlignmentError("ground-truth joints are collinear")

    h = pc.T @ gc  # 3x3 cross-covariance
    u, s, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    fix = np.array([1.0, 1.0, d])
    rotation = vt.T @ np.diag(fix) @ u.T
    scale = 1.0
    if with_scale:
        scale = float(np.sum(s * fix) / np.sum(pc**2))
    translation = mu_g - scale * rotation @ mu_p
    transform = RigidTransform(rotation, translation, scale)
    return Alignment(transform, Pose3D(transform.apply(p)))


def p_mpjpe(pred, gt, with_scale: bool = False) -> float:
    return mpjpe(procrustes_align(pred, gt, with_scale).aligned, gt)


class FrameResult(NamedTuple):
    action: str
    mpjpe: float
    p_mpjpe: float


@dataclass(frozen=True)
class ActionRow:
    action: str
    mpjpe: float
    p_mpjpe: float
    frames: int


@dataclass(frozen=True)
class MetricReport:
    rows: tuple[ActionRow, ...]
    overall_mpjpe: float
    overall_p_mpjpe: float
    frames: int

    def row(self, action: str) -> ActionRow:
        for r in self.rows:
            if r.action == action:
                return r
        raise KeyError(action)

    def to_dict(self) -> dict:
        return {
            "actions": [
                {"action": r.action, "mpjpe": r.mpjpe, "p_mpjpe": r.p_mpjpe, "frames": r.frames} for r in self.rows
            ],
            "overall": {"mpjpe": self.overall_mpjpe, "p_mpjpe": self.overall_p_mpjpe, "frames": self.frames},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        rows = tuple(ActionRow(r["action"], r["mpjpe"], r["p_mpjpe"], r["frames"]) for r in d["actions"])
        o = d["overall"]
        return cls(rows, o["mpjpe"], o["p_mpjpe"], o["frames"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["action", "mpjpe", "p_mpjpe", "frames"])
        for r in self.rows:
            w.writerow([r.action, repr(r.mpjpe), repr(r.p_mpjpe), r.frames])
        return buf.getvalue()


def aggregate(results: Iterable[FrameResult | tuple[str, float, float]]) -> MetricReport:
    """Per-action means and the frame-weighted overall mean, rows sorted by action."""
    by_action: dict[str, list[tuple[float, float]]] = {}
    for action, e, pe in results:
        by_action.setdefault(action, []).append((float(e), float(pe)))
    if not by_action:
        raise ValueError("no frame results to aggregate")
    rows = []
    for action in sorted(by_action):
        vals = np.array(by_action[action])
        rows.append(ActionRow(action, float(np.mean(vals[:, 0])), float(np.mean(vals[:, 1])), len(vals)))
    total = sum(r.frames for r in rows)
    overall = sum(r.mpjpe * r.frames for r in rows) / total
    overall_p = sum(r.p_mpjpe * r.frames for r in rows) / total
    return MetricReport(tuple(rows), overall, overall_p, total)
