"""Deficiency generation: image noise, missing blocks, occlusion, view assignment.

All image operations return new :class:`PixelGrid` objects and leave
pixels they do not touch bit-identical.  Noisy intensities are rounded
half away from zero and clamped to ``[0, 255]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import rng as _rng
from .geometry import Pose2D
from .skeleton import CLEAN, DeficiencyTag, MultiViewSequence, PixelGrid, round_half_away

NOISE_KINDS = ("gaussian", "salt_pepper", "speckle")
MODES = ("noise", "missing", "occlusion")
MAX_OCCLUSION = 0.7
OCCLUSION_TOLERANCE = 0.02
OCCLUSION_FILL = 128
MAX_PLACEMENTS = 1000


class OcclusionRangeError(ValueError):
    pass


def _quantize(x: np.ndarray) -> np.ndarray:
    return np.clip(round_half_away(x), 0, 255).astype(np.uint8)


def gaussian_noise(img: PixelGrid, sigma: float, seed) -> PixelGrid:
    """Additive zero-mean Gaussian noise, ``sigma`` in intensity units."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return img.copy()
    noise = _rng.as_generator(seed).normal(0.0, sigma, img.data.shape)
    return PixelGrid(_quantize(img.data + noise))


def salt_pepper(img: PixelGrid, p: float, seed) -> PixelGrid:
    """Each pixel becomes 0 with probability p/2, 255 with probability p/2."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"noise density p must lie in [0, 1], got {p}")
    u = _rng.as_generator(seed).random((img.height, img.width))
    out = img.data.copy()
    out[u < p / 2] = 0
    out[(u >= p / 2) & (u < p)] = 255
    return PixelGrid(out)


def speckle(img: PixelGrid, sigma: float, seed) -> PixelGrid:
    """Multiplicative noise ``I * (1 + N(0, sigma^2))``; sigma is dimensionless."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return img.copy()
    noise = _rng.as_generator(seed).normal(0.0, sigma, img.data.shape)
    return PixelGrid(_quantize(img.data * (1.0 + noise)))


def missing_blocks(
    img: PixelGrid, block_count: int, size_range: tuple[int, int], seed
) -> tuple[PixelGrid, np.ndarray]:
    """Black out ``block_count`` random rectangles.

    Side lengths are drawn independently and uniformly from the inclusive
    ``size_range``; the top-left corner is uniform over positions that keep
    the block inside the image.  Blocks may overlap.  Returns the image and
    the ``H x W`` boolean mask of blacked-out pixels.
    """
    lo, hi = int(size_range[0]), int(size_range[1])
    if block_count < 0:
        raise ValueError("block_count must be non-negative")
    if not 1 <= lo <= hi <= min(img.width, img.height):
        raise ValueError(f"invalid block size range {size_range} for a {img.width}x{img.height} image")
    gen = _rng.as_generator(seed)
    mask = np.zeros((img.height, img.width), dtype=bool)
    for _ in range(block_count):
        bw, bh = gen.integers(lo, hi + 1, size=2)
        x = gen.integers(0, img.width - bw + 1)
        y = gen.integers(0, img.height - bh + 1)
        mask[y : y + bh, x : x + bw] = True
    out = img.data.copy()
    out[mask] = 0
    return PixelGrid(out), mask


@dataclass(eq=False)
class OccluderMask:
    bitmap: np.ndarray
    origin: str = "procedural"

    def __post_init__(self):
        self.bitmap = np.asarray(self.bitmap, dtype=bool)
        if self.bitmap.ndim != 2:
            raise ValueError("occluder bitmap must be 2-D")
        if not self.bitmap.any():
            raise ValueError("occluder mask must have at least one occupied pixel")
        if self.origin not in ("procedural", "external"):
            raise ValueError("origin must be 'procedural' or 'external'")

    @property
    def width(self) -> int:
        return self.bitmap.shape[1]

    @property
    def height(self) -> int:
        return self.bitmap.shape[0]


def procedural_occluders(count: int, size_range: tuple[int, int], seed) -> list[OccluderMask]:
    """Random rectangles, ellipses and blobs (unions of discs), cycling in that order."""
    gen = _rng.as_generator(seed)
    lo, hi = size_range
    masks = []
    for i in range(count):
        w, h = (int(s) for s in gen.integers(lo, hi + 1, size=2))
        yy, xx = np.mgrid[0:h, 0:w]
        shape = i % 3
        if shape == 0:
            bitmap = np.ones((h, w), dtype=bool)
        elif shape == 1:
            bitmap = ((xx + 0.5 - w / 2) / (w / 2)) ** 2 + ((yy + 0.5 - h / 2) / (h / 2)) ** 2 <= 1.0
        else:
            bitmap = np.zeros((h, w), dtype=bool)
            for _ in range(int(gen.integers(3, 7))):
                cx, cy = gen.uniform(0, w), gen.uniform(0, h)
                r = gen.uniform(0.15, 0.4) * min(w, h)
                bitmap |= (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
            if not bitmap.any():
                bitmap[h // 2, w // 2] = True
        masks.append(OccluderMask(bitmap, "procedural"))
    return masks


def occluder_from_grid(grid: PixelGrid) -> OccluderMask:
    """External mask: any non-zero pixel is occupied."""
    return OccluderMask(np.any(grid.data != 0, axis=2), "external")


class OcclusionResult(NamedTuple):
    image: PixelGrid
    achieved_degree: float
    mask: np.ndarray  # painted pixels, H x W
    converged: bool


def occlusion_degree(mask: np.ndarray, bbox: tuple[int, int, int, int]) -> float:
    x0, y0, x1, y1 = bbox
    return float(np.count_nonzero(mask[y0:y1, x0:x1])) / float((x1 - x0) * (y1 - y0))


def occlude(
    img: PixelGrid,
    occluders: Sequence[OccluderMask],
    target_degree: float,
    bbox: tuple[int, int, int, int],
    seed,
    tolerance: float = OCCLUSION_TOLERANCE,
    max_attempts: int = MAX_PLACEMENTS,
) -> OcclusionResult:
    """Paint occluders over the person box until the occluded fraction hits the target.

    ``bbox`` is half-open ``(x0, y0, x1, y1)``.  Each attempt picks an
    occluder, optionally crops it to a random sub-rectangle (side fractions
    uniform in [0.2, 1]), and drops it at a uniform position that overlaps
    the box.  A placement is kept only if it does not push the degree past
    ``target + tolerance``.  Kept placements are painted mid-gray.
    ``converged`` is False when the attempt cap ran out first.
    """
    if not 0.0 <= target_degree <= MAX_OCCLUSION:
        raise OcclusionRangeError(f"target occlusion degree must lie in [0, {MAX_OCCLUSION}], got {target_degree}")
    x0, y0, x1, y1 = bbox
    if not (0 <= x0 < x1 <= img.width and 0 <= y0 < y1 <= img.height):
        raise ValueError(f"bbox {bbox} is not inside the {img.width}x{img.height} image")
    mask = np.zeros((img.height, img.width), dtype=bool)
    area = (x1 - x0) * (y1 - y0)
    covered = 0
    ok = lambda c: abs(c / area - target_degree) <= tolerance  # noqa: E731
    if not ok(covered) and not occluders:
        raise ValueError("no occluders supplied")
    gen = _rng.as_generator(seed)
    attempts = 0
    while not ok(covered) and attempts < max_attempts:
        attempts += 1
        occ = occluders[int(gen.integers(len(occluders)))].bitmap
        if gen.random() < 0.5:
            ch = max(1, int(round(occ.shape[0] * gen.uniform(0.2, 1.0))))
            cw = max(1, int(round(occ.shape[1] * gen.uniform(0.2, 1.0))))
            oy = int(gen.integers(0, occ.shape[0] - ch + 1))
            ox = int(gen.integers(0, occ.shape[1] - cw + 1))
            occ = occ[oy : oy + ch, ox : ox + cw]
        oh, ow = occ.shape
        # top-left so that the placement intersects the box
        px = int(gen.integers(x0 - ow + 1, x1))
        py = int(gen.integers(y0 - oh + 1, y1))
        sx0, sy0 = max(px, 0), max(py, 0)
        sx1, sy1 = min(px + ow, img.width), min(py + oh, img.height)
        if sx0 >= sx1 or sy0 >= sy1:
            continue
        patch = occ[sy0 - py : sy1 - py, sx0 - px : sx1 - px]
        trial = mask.copy()
        trial[sy0:sy1, sx0:sx1] |= patch
        c = int(np.count_nonzero(trial[y0:y1, x0:x1]))
        if c == covered or c / area > target_degree + tolerance:
            continue
        mask, covered = trial, c
    out = img.data.copy()
    out[mask] = OCCLUSION_FILL
    return OcclusionResult(PixelGrid(out), covered / area, mask, ok(covered))


def assign_deficiency(views: int, mode: str, seed) -> list[str]:
    """Per-view deficiency kinds for one multi-view sample.

    ``noise`` and ``missing`` flag exactly one view chosen uniformly (noise
    draws its model uniformly from the three noise kinds); ``occlusion``
    flags ``ceil(3 V / 4)`` distinct views, three of four on a 4-camera
    rig.  Unflagged views are ``"clean"``.
    """
    if views < 2:
        raise ValueError("the assignment protocol needs at least 2 views")
    if mode not in MODES:
        raise ValueError(f"unknown deficiency mode {mode!r}; choose from {MODES}")
    gen = _rng.as_generator(seed)
    kinds = ["clean"] * views
    if mode == "occlusion":
        for v in gen.choice(views, size=math.ceil(3 * views / 4), replace=False):
            kinds[int(v)] = "occlusion"
    else:
        v = int(gen.integers(views))
        kinds[v] = "missing" if mode == "missing" else NOISE_KINDS[int(gen.integers(3))]
    return kinds


@dataclass(frozen=True)
class Severity:
    """Keypoint-level strength of each deficiency kind.

    Noise kinds perturb visible joints with Gaussian pixel noise of the
    given sigma; ``missing`` and ``occlusion`` are per-joint dropout
    probabilities.
    """

    gaussian: float = 20.0
    salt_pepper: float = 20.0
    speckle: float = 20.0
    missing: float = 0.8
    occlusion: float = 0.3

    def __post_init__(self):
        for name in NOISE_KINDS:
            if getattr(self, name) < 0:
                raise ValueError(f"severity.{name} must be non-negative")
        for name in ("missing", "occlusion"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"severity.{name} must lie in [0, 1]")
        if self.occlusion > MAX_OCCLUSION:
            raise ValueError(f"severity.occlusion must not exceed {MAX_OCCLUSION}")

    def tag(self, kind: str) -> DeficiencyTag:
        if kind == "clean":
            return CLEAN
        if kind in NOISE_KINDS:
            return DeficiencyTag.make(kind, sigma=getattr(self, kind))
        if kind == "missing":
            return DeficiencyTag.make(kind, dropout=self.missing)
        return DeficiencyTag.make(kind, degree=self.occlusion)


def degrade_observations(
    mvs: MultiViewSequence,
    assignment: Sequence[str] | Sequence[Sequence[str]],
    severity: Severity,
    seed: int,
    sequence_index: int = 0,
) -> MultiViewSequence:
    """Keypoint-level analogue of the image corruptions.

    ``assignment`` is either one kind per view (applied to every frame) or
    a ``T x V`` table of per-frame kinds.  Randomness for cell ``(v, t)``
    comes from the stream ``(seed, "degrade", sequence_index, v, t)``.
    """
    n_views, n_frames = mvs.view_count, mvs.frame_count
    table = _assignment_table(assignment, n_views, n_frames)
    observations = [list(row) for row in mvs.observations]
    tags = [list(row) for row in mvs.deficiency]
    for t in range(n_frames):
        for v in range(n_views):
            kind = table[t][v]
            tags[v][t] = severity.tag(kind)
            if kind == "clean":
                continue
            obs = mvs.observations[v][t]
            gen = _rng.stream(seed, "degrade", sequence_index, v, t)
            if kind in NOISE_KINDS:
                sigma = getattr(severity, kind)
                if sigma == 0:
                    continue
                joints = obs.joints.copy()
                noise = gen.normal(0.0, sigma, joints.shape)
                joints[obs.visibility] += noise[obs.visibility]
                observations[v][t] = Pose2D(joints, obs.visibility.copy())
            else:
                p = severity.missing if kind == "missing" else severity.occlusion
                if p == 0:
                    continue
                drop = gen.random(obs.joint_count) < p
                observations[v][t] = Pose2D(obs.joints.copy(), obs.visibility & ~drop)
    return MultiViewSequence(
        mvs.cameras, observations, mvs.rays, tags, mvs.ground_truth, mvs.action, mvs.frame_rate
    )


def _assignment_table(assignment, n_views: int, n_frames: int) -> list[list[str]]:
    assignment = list(assignment)
    if assignment and isinstance(assignment[0], str):
        if len(assignment) != n_views:
            raise ValueError(f"assignment has {len(assignment)} entries for {n_views} views")
        rows = [list(assignment)] * n_frames
    else:
        rows = [list(r) for r in assignment]
        if len(rows) != n_frames or any(len(r) != n_views for r in rows):
            raise ValueError("per-frame assignment must be a T x V table")
    for row in rows:
        for kind in row:
            if kind not in DeficiencyTag.KINDS:
                raise ValueError(f"unknown deficiency kind {kind!r}")
    return rows


@dataclass(frozen=True)
class ImageCorruption:
    """Image-domain parameters: sigma in intensity units, speckle sigma dimensionless."""

    gaussian_sigma: float = 25.0
    salt_pepper_p: float = 0.05
    speckle_sigma: float = 0.2
    block_count: int = 8
    block_size: tuple[int, int] = (10, 30)
    occlusion_degree: float = 0.3
    occluder_count: int = 12
    occluder_size: tuple[int, int] = (10, 50)
    occluders: tuple[OccluderMask, ...] = field(default=(), compare=False)


def corrupt_image(
    img: PixelGrid,
    kind: str,
    params: ImageCorruption,
    seed: int,
    bbox: tuple[int, int, int, int] | None = None,
) -> PixelGrid:
    """Apply one deficiency kind to an image."""
    if kind == "clean":
        return img.copy()
    if kind == "gaussian":
        return gaussian_noise(img, params.gaussian_sigma, seed)
    if kind == "salt_pepper":
        return salt_pepper(img, params.salt_pepper_p, seed)
    if kind == "speckle":
        return speckle(img, params.speckle_sigma, seed)
    if kind == "missing":
        return missing_blocks(img, params.block_count, params.block_size, seed)[0]
    if kind == "occlusion":
        gen = _rng.as_generator(seed)
        occluders = list(params.occluders) or procedural_occluders(
            params.occluder_count, params.occluder_size, gen
        )
        box = bbox if bbox is not None else (0, 0, img.width, img.height)
        return occlude(img, occluders, params.occlusion_degree, box, gen).image
    raise ValueError(f"unknown deficiency kind {kind!r}")
