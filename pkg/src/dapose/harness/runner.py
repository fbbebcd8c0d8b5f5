"""Experiment orchestration: generate, corrupt, estimate, fuse, evaluate, report.

Every random draw is keyed through :mod:`dapose.rng` by
``(seed, stage, sequence, view, frame)``; sequences are processed
independently (optionally on a thread pool) and reassembled in config
order, so artifacts do not depend on the thread count.  Wall-clock time is
written to ``timing.json`` and kept out of the report so that
``report.json`` stays byte-identical between runs.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import binomtest

from .. import __version__
from .. import rng as _rng
from ..corruption import (
    ImageCorruption,
    Severity,
    assign_deficiency,
    corrupt_image,
    degrade_observations,
    occluder_from_grid,
)
from ..fusion import estimate_sequence
from ..geometry import CameraParams, Pose2D, circular_rig
from ..metrics import aggregate, mpjpe, p_mpjpe, FrameResult, MetricReport
from ..pnm import read_pnm, write_pnm
from ..skeleton import (
    MultiViewSequence,
    SkeletonModel,
    chain_skeleton,
    generate_motion,
    human36m_skeleton,
    person_bbox,
    rasterize_view,
    render_observations,
)
from . import plots
from .config import ExperimentConfig, dump_config
from .dataset import SCHEMA_VERSION, camera_from_dict, save_datasets

THREADS_ENV = "DEPROPOSE_THREADS"

DEGRADATION_NOTE = (
    "keypoint-level degradation: noise kinds add Gaussian pixel noise (severity sigma, px) to visible joints; "
    "missing and occlusion drop each joint independently with the severity probability"
)
INFERENCE_NOTE = "inference mode: e_abs = 0, weights come from reprojection error against observed 2D joints"
TRAINING_NOTE = "training mode: e_proj against projected ground truth, e_abs against ground-truth 3D pose"


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage


def _stage(name: str):
    def wrap(fn):
        def inner(*a, **kw):
            try:
                return fn(*a, **kw)
            except StageError:
                raise
            except Exception as exc:  # noqa: BLE001
                raise StageError(name, exc) from exc

        return inner

    return wrap


def resolve_threads(cfg: ExperimentConfig, override: int | None = None) -> int:
    n = override or cfg.threads or (os.cpu_count() or 1)
    cap = os.environ.get(THREADS_ENV)
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def build_rig(cfg: ExperimentConfig) -> list[CameraParams]:
    r = cfg.rig
    if r.preset == "explicit":
        return [camera_from_dict(c.model_dump()) for c in r.cameras]
    return circular_rig(
        views=r.views,
        radius=r.radius_mm,
        height=r.height_mm,
        target=r.target_mm,
        focal=r.focal_px,
        image_size=tuple(r.image_size),
    )


def build_skeleton(cfg: ExperimentConfig) -> SkeletonModel:
    return human36m_skeleton() if cfg.skeleton.joints == 17 else chain_skeleton(cfg.skeleton.joints)


def severity_from(cfg: ExperimentConfig) -> Severity:
    return Severity(**cfg.corruption.severity.model_dump())


def image_params(cfg: ExperimentConfig, base: Path | None = None) -> ImageCorruption:
    ic = cfg.corruption.images
    masks = []
    for p in ic.occluder_masks:
        path = Path(p) if base is None or Path(p).is_absolute() else base / p
        masks.append(occluder_from_grid(read_pnm(path)))
    return ImageCorruption(
        gaussian_sigma=ic.gaussian_sigma,
        salt_pepper_p=ic.salt_pepper_p,
        speckle_sigma=ic.speckle_sigma,
        block_count=ic.block_count,
        block_size=tuple(ic.block_size),
        occlusion_degree=ic.occlusion_degree,
        occluder_count=ic.occluder_count,
        occluder_size=tuple(ic.occluder_size),
        occluders=tuple(masks),
    )


def deficiency_table(cfg: ExperimentConfig, sequence: int, frames: int) -> list[list[str]]:
    """Per-frame view assignment (``T x V``) for one sequence."""
    mode = cfg.corruption.mode
    views = cfg.view_count
    table = []
    for t in range(frames):
        if mode == "none":
            table.append(["clean"] * views)
            continue
        m = mode
        if mode == "mixed":
            options = cfg.corruption.mixed_modes
            m = options[int(_rng.stream(cfg.seed, "mode", sequence, -1, t).integers(len(options)))]
        table.append(assign_deficiency(views, m, _rng.derive_seed(cfg.seed, "assign", sequence, -1, t)))
    return table


@dataclass
class PreparedSequence:
    clean: MultiViewSequence
    degraded: MultiViewSequence
    table: list[list[str]]


@_stage("generate")
def generate_sequence(cfg: ExperimentConfig, index: int, rig, model) -> MultiViewSequence:
    action = cfg.motion.actions[index]
    seq = generate_motion(
        model, action, cfg.motion.frames, _rng.derive_seed(cfg.seed, "motion", index), cfg.motion.frame_rate
    )
    return render_observations(seq, rig, cfg.observation.pixel_noise_sigma, cfg.seed, index)


@_stage("corrupt")
def corrupt_sequence(cfg: ExperimentConfig, index: int, mvs: MultiViewSequence) -> PreparedSequence:
    table = deficiency_table(cfg, index, mvs.frame_count)
    degraded = degrade_observations(mvs, table, severity_from(cfg), cfg.seed, index)
    return PreparedSequence(mvs, degraded, table)


def _scaled(obs: Pose2D, cam: CameraParams, size: tuple[int, int]) -> Pose2D:
    sx, sy = size[0] / cam.image_size[0], size[1] / cam.image_size[1]
    return Pose2D(obs.joints * np.array([sx, sy]), obs.visibility)


@_stage("images")
def write_images(cfg: ExperimentConfig, index: int, prep: PreparedSequence, model, out: Path, params) -> list[str]:
    ic = cfg.corruption.images
    size = tuple(ic.raster_size)
    folder = out / "images" / f"{index:02d}_{prep.clean.action}"
    folder.mkdir(parents=True, exist_ok=True)
    written = []
    for t in range(min(ic.frames_per_sequence, prep.clean.frame_count)):
        for v, cam in enumerate(prep.clean.cameras):
            obs = _scaled(prep.clean.observations[v][t], cam, size)
            img = rasterize_view(obs, model, size)
            kind = prep.table[t][v]
            img = corrupt_image(
                img, kind, params, _rng.derive_seed(cfg.seed, "image", index, v, t), person_bbox(obs, size)
            )
            path = folder / f"t{t:04d}_v{v}_{kind}.pgm"
            write_pnm(img, path)
            written.append(path.relative_to(out).as_posix())
    return written


@dataclass
class SequenceResult:
    action: str
    frames: int
    per_mode: dict[str, list[FrameResult]]
    weights: np.ndarray | None  # T x V adaptive weights
    kinds: list[list[str]]  # T x V
    warnings: dict[str, int]


@_stage("estimate")
def evaluate_sequence(cfg: ExperimentConfig, mvs: MultiViewSequence, kinds: list[list[str]]) -> SequenceResult:
    if mvs.ground_truth is None:
        raise ValueError("evaluation needs ground-truth poses")
    f = cfg.fusion
    per_mode, warn = {}, {}
    weights = None
    for mode in f.modes:
        trace = estimate_sequence(
            mvs,
            mode,
            f.mode,
            estimator=f.estimator,
            reduction=f.reduction,
            epsilon=f.epsilon,
            reference_view=f.reference_view,
        )
        rows = []
        for pose, gt in zip(trace.poses, mvs.ground_truth.frames):
            rows.append(
                FrameResult(mvs.action, mpjpe(pose, gt), p_mpjpe(pose, gt, with_scale=cfg.metrics.p_mpjpe_scale))
            )
        per_mode[mode] = rows
        warn[mode] = sum(len(p.warnings) for p in trace.poses)
        if mode == "adaptive":
            weights = trace.weight_matrix()
    return SequenceResult(mvs.action, mvs.frame_count, per_mode, weights, kinds, warn)


def _kinds_of(mvs: MultiViewSequence) -> list[list[str]]:
    return [[mvs.deficiency[v][t].kind for v in range(mvs.view_count)] for t in range(mvs.frame_count)]


@_stage("sweep")
def severity_sweep(cfg: ExperimentConfig, mvs: MultiViewSequence) -> list[dict]:
    """Adaptive weight of a Gaussian-noised view 0 as its sigma grows."""
    f = cfg.fusion
    out = []
    if mvs.view_count < 2:
        return out
    for k, sigma in enumerate(cfg.output.severity_sweep):
        kinds = ["gaussian"] + ["clean"] * (mvs.view_count - 1)
        d = degrade_observations(mvs, kinds, Severity(gaussian=sigma), _rng.derive_seed(cfg.seed, "sweep", k), 0)
        w = estimate_sequence(d, "adaptive", "inference", estimator=f.estimator, reduction=f.reduction,
                              epsilon=f.epsilon).weight_matrix()  # fmt: skip
        out.append(
            {
                "sigma": float(sigma),
                "deficient_view_weight": float(np.mean(w[:, 0])),
                "clean_view_weight": float(np.mean(w[:, 1:])),
            }
        )
    return out


def _sign_test(a: np.ndarray, b: np.ndarray) -> dict:
    """Paired sign test of ``a < b`` (two-sided p-value, ties dropped)."""
    better = int(np.sum(a < b))
    worse = int(np.sum(a > b))
    n = better + worse
    p = float(binomtest(better, n, 0.5).pvalue) if n else 1.0
    return {
        "mean_difference_mm": float(np.mean(b - a)),
        "adaptive_better": better,
        "adaptive_worse": worse,
        "ties": int(a.size - n),
        "sign_test_p": p,
    }


@dataclass
class RunReport:
    data: dict
    csv: str
    wall_clock: float = 0.0
    files: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True, allow_nan=False) + "\n"

    def metric_report(self, mode: str) -> MetricReport:
        return MetricReport.from_dict(self.data["metrics"][mode])

    def per_frame(self, mode: str, key: str = "mpjpe") -> np.ndarray:
        return np.array(self.data["per_frame"]["modes"][mode][key])


def _report_csv(metrics: dict[str, MetricReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fusion_mode", "action", "mpjpe", "p_mpjpe", "frames"])
    for mode, rep in metrics.items():
        for r in rep.rows:
            w.writerow([mode, r.action, repr(r.mpjpe), repr(r.p_mpjpe), r.frames])
    return buf.getvalue()


def _assemble(cfg: ExperimentConfig, results: list[SequenceResult], sweep: list[dict], images: list[str]) -> RunReport:
    modes = list(cfg.fusion.modes)
    metrics = {m: aggregate([r for s in results for r in s.per_mode[m]]) for m in modes}
    per_frame = {
        "action": [s.action for s in results for _ in range(s.frames)],
        "t": [t for s in results for t in range(s.frames)],
        "modes": {
            m: {
                "mpjpe": [r.mpjpe for s in results for r in s.per_mode[m]],
                "p_mpjpe": [r.p_mpjpe for s in results for r in s.per_mode[m]],
            }
            for m in modes
        },
    }
    paired = {}
    if "adaptive" in modes:
        a = np.array(per_frame["modes"]["adaptive"]["mpjpe"])
        for m in modes:
            if m != "adaptive":
                paired[m] = _sign_test(a, np.array(per_frame["modes"][m]["mpjpe"]))

    cells: dict[str, int] = {}
    for s in results:
        for row in s.kinds:
            for k in row:
                cells[k] = cells.get(k, 0) + 1
    deficiency = {"cells": dict(sorted(cells.items())), "note": DEGRADATION_NOTE}

    weights: dict = {"note": INFERENCE_NOTE if cfg.fusion.mode == "inference" else TRAINING_NOTE}
    traced = [s for s in results if s.weights is not None]
    if traced:
        w = np.concatenate([s.weights for s in traced])
        kinds = np.array([k for s in traced for k in s.kinds])
        weights["per_view"] = [
            {"view": v, "mean": float(np.mean(w[:, v])), "std": float(np.std(w[:, v]))} for v in range(w.shape[1])
        ]
        weights["by_kind"] = {
            k: {"mean": float(np.mean(w[kinds == k])), "cells": int(np.sum(kinds == k))}
            for k in sorted(set(kinds.reshape(-1).tolist()))
        }
        weights["trace"] = {f"{i:02d}_{s.action}": s.weights.tolist() for i, s in enumerate(traced)}

    data = {
        "toolkit": {"name": "dapose", "version": __version__, "schema_version": SCHEMA_VERSION},
        "config": json.loads(dump_config(cfg)),
        "metrics": {m: metrics[m].to_dict() for m in modes},
        "paired_vs_adaptive": paired,
        "per_frame": per_frame,
        "weights": weights,
        "deficiency": deficiency,
        "severity_sweep": sweep,
        "estimator_warnings": {m: sum(s.warnings[m] for s in results) for m in modes},
        "images": images,
    }
    return RunReport(data, _report_csv(metrics))


def write_outputs(report: RunReport, cfg: ExperimentConfig, out: Path) -> list[str]:
    out.mkdir(parents=True, exist_ok=True)
    files = {"report.json": report.to_json(), "report.csv": report.csv}
    if cfg.output.plots:
        files["mpjpe.svg"] = plots.bar_chart(
            {m: r["overall"]["mpjpe"] for m, r in report.data["metrics"].items()}, "Mean MPJPE by fusion mode"
        )
        sweep = report.data["severity_sweep"]
        if sweep:
            files["weights.svg"] = plots.line_chart(
                [p["sigma"] for p in sweep],
                {
                    "noisy view": [p["deficient_view_weight"] for p in sweep],
                    "clean views": [p["clean_view_weight"] for p in sweep],
                },
                "Adaptive weight vs. noise severity",
                "pixel noise sigma (px)",
                "mean normalized weight",
            )
    for name, text in files.items():
        with open(out / name, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return sorted(files)


def _map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def prepare_sequences(cfg: ExperimentConfig, threads: int = 1) -> list[PreparedSequence]:
    rig, model = build_rig(cfg), build_skeleton(cfg)

    def task(i):
        return corrupt_sequence(cfg, i, generate_sequence(cfg, i, rig, model))

    return _map(task, list(range(len(cfg.motion.actions))), threads)


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: str | os.PathLike | None = None,
    threads: int | None = None,
    sequences: Sequence[MultiViewSequence] | None = None,
    base_dir: str | os.PathLike | None = None,
) -> RunReport:
    """Run the full pipeline and write its artifacts into ``out_dir``.

    When ``sequences`` is given (already-corrupted data with ground
    truth), generation and corruption are skipped.
    """
    start = time.perf_counter()
    n_threads = resolve_threads(cfg, threads)
    out = Path(out_dir if out_dir is not None else cfg.output.dir)
    images: list[str] = []
    if sequences is None:
        prepared = prepare_sequences(cfg, n_threads)
        evaluated = [(p.degraded, p.table) for p in prepared]
        if cfg.corruption.images.enabled:
            model = build_skeleton(cfg)
            params = _stage("images")(image_params)(cfg, Path(base_dir) if base_dir else None)
            batches = _map(
                lambda ip: write_images(cfg, ip[0], ip[1], model, out, params), list(enumerate(prepared)), n_threads
            )
            images = [p for b in batches for p in b]
        sweep_source = prepared[0].clean
    else:
        evaluated = [(s, _kinds_of(s)) for s in sequences]
        sweep_source = sequences[0]

    results = _map(lambda sk: evaluate_sequence(cfg, sk[0], sk[1]), evaluated, n_threads)
    sweep = severity_sweep(cfg, sweep_source)
    report = _stage("report")(_assemble)(cfg, results, sweep, images)
    report.files = write_outputs(report, cfg, out) + images
    if cfg.output.dataset and sequences is None:
        save_datasets([p.degraded for p in prepared], out / "dataset.json")
        report.files.append("dataset.json")
    report.wall_clock = time.perf_counter() - start
    with open(out / "timing.json", "w", encoding="utf-8") as fh:
        json.dump({"wall_clock_s": report.wall_clock, "threads": n_threads}, fh, indent=2)
        fh.write("\n")
    return report
