"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that the terminal summary prints.
"""

import time

import numpy as np
import pytest
from scipy import stats
from scipy.spatial.transform import Rotation

from conftest import ACCEPTANCE
from dapose.corruption import (
    NOISE_KINDS,
    OcclusionRangeError,
    assign_deficiency,
    gaussian_noise,
    occlude,
    procedural_occluders,
    salt_pepper,
    speckle,
)
from dapose.fusion import fusion_weights
from dapose.geometry import circular_rig, project, triangulate
from dapose.harness.config import parse_config
from dapose.harness.runner import run_experiment
from dapose.metrics import aggregate, mpjpe, procrustes_align
from dapose.skeleton import PixelGrid, generate_motion, human36m_skeleton

pytestmark = pytest.mark.acceptance


def record(key, ok, detail):
    ACCEPTANCE[key] = (bool(ok), detail)
    print(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")
    assert ok, detail


def test_1_geometry_round_trip():
    rig = circular_rig(views=4)
    seq = generate_motion(human36m_skeleton(), "walk", 100, 0)
    start = time.perf_counter()
    errs = [mpjpe(triangulate([(project(f, c), c) for c in rig]), f) for f in seq.frames]
    elapsed = time.perf_counter() - start
    worst = max(errs)
    record("1 geometry round trip", worst < 1e-3 and elapsed < 1.0,
           f"max MPJPE {worst:.2e} mm over 100 frames (< 1e-3), {elapsed:.3f} s (< 1 s)")  # fmt: skip


def test_2_procrustes():
    g = np.random.default_rng(2)
    worst, dets, violations = 0.0, [], 0
    for _ in range(1000):
        gt = g.normal(0, 200, (17, 3))
        r = Rotation.random(random_state=g).as_matrix()
        pred = gt @ r.T + g.normal(0, 1000, 3)
        al = procrustes_align(pred, gt)
        worst = max(worst, mpjpe(al.aligned, gt))
        dets.append(np.linalg.det(al.transform.rotation))
    for _ in range(1000):
        gt = g.normal(0, 200, (17, 3))
        pred = gt + g.normal(0, g.uniform(1, 100), (17, 3))
        al = procrustes_align(pred, gt)
        dets.append(np.linalg.det(al.transform.rotation))
        if np.sum((al.aligned.joints - gt) ** 2) > np.sum((pred - gt) ** 2):
            violations += 1
    det_err = float(np.max(np.abs(np.array(dets) - 1.0)))
    ok = worst < 1e-9 and det_err < 1e-9 and violations == 0
    record("2 procrustes", ok,
           f"max p_mpjpe {worst:.2e} mm (< 1e-9), max |det R - 1| {det_err:.1e}, {violations} optimality violations")  # fmt: skip


def test_3_fusion_weight_math():
    w = fusion_weights([1.0, 3.0], [0.0, 0.0], epsilon=1e-15).omega
    e1 = float(np.max(np.abs(w - [0.75, 0.25])))
    u = fusion_weights([0.7] * 4, [0.2] * 4).omega
    e2 = float(np.max(np.abs(u - 0.25)))
    g = np.random.default_rng(3)
    violations = 0
    for _ in range(10_000):
        n = int(g.integers(2, 9))
        e = g.exponential(g.uniform(0.1, 100), n)
        v = int(g.integers(n))
        base = fusion_weights(e, np.zeros(n)).omega
        e2v = e.copy()
        e2v[v] += g.exponential(10.0) + 1e-6
        after = fusion_weights(e2v, np.zeros(n)).omega
        others = np.arange(n) != v
        if not (after[v] < base[v] and np.all(after[others] >= base[others])):
            violations += 1
    ok = e1 <= 1e-12 and e2 <= 1e-12 and violations == 0
    record("3 fusion weight math", ok,
           f"(1,3) error {e1:.1e}, uniform error {e2:.1e} (<= 1e-12), {violations} monotonicity violations / 1e4")  # fmt: skip


def _protocol_run(tmp_path, mode):
    cfg = parse_config({"seed": 0, "corruption": {"mode": mode}, "output": {"plots": False, "severity_sweep": []}})
    rep = run_experiment(cfg, tmp_path / mode)
    return {m: rep.per_frame(m) for m in ("adaptive", "uniform", "none")}


def _sign_p(a, b):
    better, worse = int(np.sum(a < b)), int(np.sum(a > b))
    return stats.binomtest(better, better + worse, 0.5).pvalue, better, worse


def test_4_deficiency_robustness(tmp_path):
    start = time.perf_counter()
    lines, ok = [], True
    for mode, label in (("noise", "1-of-4 noisy sigma=20"), ("mixed", "1-of-4 noisy or missing(0.8)")):
        r = _protocol_run(tmp_path, mode)
        a = r["adaptive"]
        assert a.size == 200
        for other in ("uniform", "none"):
            p, better, worse = _sign_p(a, r[other])
            passed = a.mean() < r[other].mean() and p < 0.01
            ok &= passed
            lines.append(f"{label}: adaptive {a.mean():.1f} vs {other} {r[other].mean():.1f} mm, "
                         f"{better}/{worse}, p={p:.1e}")  # fmt: skip
    elapsed = time.perf_counter() - start
    ok &= elapsed < 30
    record("4 deficiency robustness", ok, "; ".join(lines) + f"; {elapsed:.1f} s (< 30 s)")


def test_4_missing_arm_four_views_beat_single_view(tmp_path):
    r = _protocol_run(tmp_path, "missing")
    p, better, worse = _sign_p(r["adaptive"], r["none"])
    assert r["adaptive"].mean() < r["none"].mean() and p < 0.01, (better, worse, p)


@pytest.mark.xfail(
    strict=True,
    reason="missing-only arm: dropped joints are excluded from both fusions, so adaptive and uniform tie",
)
def test_4_missing_arm_adaptive_beats_uniform(tmp_path):
    r = _protocol_run(tmp_path, "missing")
    p, better, worse = _sign_p(r["adaptive"], r["uniform"])
    ok = r["adaptive"].mean() < r["uniform"].mean() and p < 0.01
    record("4 missing-only arm, adaptive vs uniform (known gap)", ok,
           f"adaptive {r['adaptive'].mean():.3f} vs uniform {r['uniform'].mean():.3f} mm, "
           f"{better}/{worse}, p={p:.2g}")  # fmt: skip


def test_5_corruption_statistics():
    checks = []
    std = gaussian_noise(PixelGrid.filled(1000, 1000, 128), 10.0, 5).data.astype(float).std()
    checks.append((abs(std - 10.0) <= 0.2, f"gaussian std {std:.3f} (10 +/- 2%)"))

    out = salt_pepper(PixelGrid.filled(1000, 1000, 128), 0.1, 5).data
    frac = np.count_nonzero(out != 128) / out.size
    lo, hi = (x / out.size for x in stats.binom.interval(0.99, out.size, 0.1))
    checks.append((lo <= frac <= hi, f"salt-pepper fraction {frac:.5f} in [{lo:.5f}, {hi:.5f}]"))

    zeros = speckle(PixelGrid.filled(500, 500, 0), 0.5, 5).data
    checks.append((not zeros.any(), "speckle keeps zero image"))

    occ = procedural_occluders(12, (10, 50), 5)
    worst = 0.0
    for target in (0.1, 0.3, 0.5, 0.7):
        for seed in range(10):
            res = occlude(PixelGrid.filled(224, 224), occ, target, (60, 30, 160, 200), seed)
            worst = max(worst, abs(res.achieved_degree - target))
    checks.append((worst <= 0.02, f"occlusion max deviation {worst:.4f} (<= 0.02)"))

    try:
        occlude(PixelGrid.filled(50, 50), occ, 0.71, (0, 0, 50, 50), 0)
        rejected = False
    except OcclusionRangeError:
        rejected = True
    checks.append((rejected, "target > 0.7 rejected"))
    record("5 corruption statistics", all(c for c, _ in checks), "; ".join(d for _, d in checks))


def test_6_protocol_conformance():
    details, ok = [], True
    for mode, flagged in (("noise", 1), ("missing", 1), ("occlusion", 3)):
        counts = np.zeros(4)
        exact = True
        for s in range(10_000):
            kinds = assign_deficiency(4, mode, s)
            bad = [k != "clean" for k in kinds]
            exact &= sum(bad) == flagged
            counts += bad
            if mode == "noise":
                exact &= all(k in NOISE_KINDS for k, b in zip(kinds, bad) if b)
        p = stats.chisquare(counts).pvalue  # uniform expectation per view
        ok &= exact and p > 0.01
        details.append(f"{mode}: exactly {flagged} flagged={exact}, chi-square p={p:.3f}")
    record("6 protocol conformance", ok, "; ".join(details))


def _artifacts(root):
    return {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.suffix in (".json", ".csv", ".pgm") and p.name != "timing.json"
    }


def test_7_determinism(tmp_path):
    cfg = parse_config(
        {
            "seed": 11,
            "motion": {"frames": 10},
            "corruption": {"mode": "mixed", "mixed_modes": ["noise", "missing", "occlusion"],
                           "images": {"enabled": True, "frames_per_sequence": 2}},
        }
    )  # fmt: skip
    runs = {}
    for name, threads in (("p1a", 1), ("p1b", 1), ("p8a", 8), ("p8b", 8)):
        run_experiment(cfg, tmp_path / name, threads=threads)
        runs[name] = _artifacts(tmp_path / name)
    ref = runs["p1a"]
    pgms = sum(k.endswith(".pgm") for k in ref)
    same = all(r == ref for r in runs.values())
    ok = same and pgms == 4 * 2 * 4 and {"report.json", "report.csv"} <= set(ref)
    record("7 determinism", ok, f"{len(ref)} artifacts ({pgms} PGM) byte-identical across 2 runs x parallelism 1 and 8")


def test_8_metric_definitions():
    z = np.zeros((1, 3))
    cases = [
        (mpjpe(z, z), 0.0),
        (mpjpe([[3.0, 4.0, 0.0]], z), 5.0),
        (mpjpe([[3.0, 4.0, 0.0], [0.0, 0.0, 0.0]], [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]), 2.5),
    ]
    worst = max(abs(a - b) for a, b in cases)
    rep = aggregate([("a", 2.0, 2.0), ("b", 4.0, 4.0), ("b", 4.0, 4.0), ("b", 4.0, 4.0)])
    ok = worst <= 1e-12 and rep.overall_mpjpe == 3.5
    record("8 metric definitions", ok, f"hand cases max error {worst:.1e}, weighted aggregate {rep.overall_mpjpe!r}")
