import json
import subprocess
import sys

import numpy as np
import pytest

from dapose import __version__
from dapose.geometry import circular_rig
from dapose.harness import cli
from dapose.harness.config import ConfigError, dump_config, load_config, parse_config, save_config
from dapose.harness.dataset import (
    ChecksumError,
    DatasetError,
    SchemaVersionError,
    dumps_dataset,
    load_dataset,
    load_datasets,
    loads_dataset,
    save_dataset,
)
from dapose.harness.runner import THREADS_ENV, StageError, deficiency_table, resolve_threads, run_experiment
from dapose.harness import plots
from dapose.corruption import Severity, degrade_observations
from dapose.skeleton import generate_motion, human36m_skeleton, render_observations

SMALL = {"seed": 5, "motion": {"actions": ["walk", "wave"], "frames": 8}, "output": {"severity_sweep": [0, 20]}}


# --- config ------------------------------------------------------------------


def test_minimal_config_defaults():
    cfg = parse_config({"seed": 1})
    assert cfg.rig.views == 4 and cfg.view_count == 4
    assert cfg.skeleton.joints == 17
    assert cfg.fusion.epsilon == 1e-6
    assert cfg.fusion.modes == ["adaptive", "uniform", "none"]
    assert cfg.corruption.severity.gaussian == 20.0 and cfg.corruption.severity.missing == 0.8


def test_negative_sigma_names_field():
    with pytest.raises(ConfigError, match=r"corruption\.severity\.gaussian"):
        parse_config({"seed": 1, "corruption": {"severity": {"gaussian": -2}}})


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="fusion.bogus"):
        parse_config({"seed": 1, "fusion": {"bogus": 1}})


def test_seed_required():
    with pytest.raises(ConfigError, match="seed"):
        parse_config({})


def test_reference_view_bounds():
    with pytest.raises(ConfigError, match="reference_view"):
        parse_config({"seed": 1, "fusion": {"reference_view": 4}})


def test_explicit_rig_needs_cameras():
    with pytest.raises(ConfigError, match="explicit"):
        parse_config({"seed": 1, "rig": {"preset": "explicit"}})


def test_config_save_load_fixed_point(tmp_path):
    src = tmp_path / "c.json"
    src.write_text(json.dumps({"seed": 3, "motion": {"frames": 12}}))
    once = tmp_path / "once.json"
    twice = tmp_path / "twice.json"
    save_config(load_config(src), once)
    save_config(load_config(once), twice)
    assert once.read_bytes() == twice.read_bytes()
    assert once.read_text() == dump_config(load_config(src))


def test_config_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{seed: ")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(p)


def test_threads_resolution(monkeypatch):
    cfg = parse_config({"seed": 0, "threads": 6})
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert resolve_threads(cfg) == 6
    monkeypatch.setenv(THREADS_ENV, "2")
    assert resolve_threads(cfg) == 2
    assert resolve_threads(cfg, 8) == 2


def test_mixed_table_uses_both_modes():
    cfg = parse_config({"seed": 0, "corruption": {"mode": "mixed"}})
    table = deficiency_table(cfg, 0, 200)
    kinds = {k for row in table for k in row}
    assert "missing" in kinds and kinds & {"gaussian", "salt_pepper", "speckle"}
    assert all(sum(k != "clean" for k in row) == 1 for row in table)


# --- dataset -----------------------------------------------------------------


@pytest.fixture(scope="module")
def mvs():
    seq = generate_motion(human36m_skeleton(), "sit", 6, 1)
    clean = render_observations(seq, circular_rig(), 1.0, 1)
    table = [["clean", "missing", "gaussian", "occlusion"]] * 6
    return degrade_observations(clean, table, Severity(missing=1.0), 1)


def _same(a, b):
    assert a.action == b.action and a.frame_rate == b.frame_rate
    assert all(x.same_as(y) for x, y in zip(a.cameras, b.cameras))
    for v in range(a.view_count):
        for t in range(a.frame_count):
            np.testing.assert_array_equal(a.observations[v][t].joints, b.observations[v][t].joints)
            np.testing.assert_array_equal(a.observations[v][t].visibility, b.observations[v][t].visibility)
            assert a.deficiency[v][t] == b.deficiency[v][t]
    assert [r for r in a.rays] == [r for r in b.rays]
    np.testing.assert_array_equal(a.ground_truth.as_array(), b.ground_truth.as_array())


def test_dataset_round_trip(tmp_path, mvs):
    path = tmp_path / "d.json"
    save_dataset(mvs, path)
    _same(load_dataset(path), mvs)


def test_dataset_nan_written_as_null():
    rig = circular_rig()
    behind = generate_motion(human36m_skeleton(), "idle", 1, 0)
    behind.frames[0].joints[0] = rig[0].center - 100.0 * rig[0].rotation[2]
    m = render_observations(behind, rig, 0.0, 0)
    text = dumps_dataset([m])
    assert "NaN" not in text and "null" in text
    back = loads_dataset(text)[0]
    assert np.isnan(back.observations[0][0].joints[0]).all()


def test_dataset_truncated_fails_checksum(tmp_path, mvs):
    path = tmp_path / "d.json"
    save_dataset(mvs, path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(ChecksumError):
        load_dataset(path)


def test_dataset_tampered_fails_checksum(mvs):
    doc = json.loads(dumps_dataset([mvs]))
    doc["sequences"][0]["frames"][0]["joints_3d"][0][0] += 1.0
    with pytest.raises(ChecksumError):
        loads_dataset(json.dumps(doc))


def test_dataset_old_version(mvs):
    doc = json.loads(dumps_dataset([mvs]))
    doc["schema_version"] = 0
    with pytest.raises(SchemaVersionError):
        loads_dataset(json.dumps(doc))


def test_dataset_multi_sequence(tmp_path, mvs):
    path = tmp_path / "d.json"
    from dapose.harness.dataset import save_datasets

    save_datasets([mvs, mvs], path)
    assert len(load_datasets(path)) == 2
    with pytest.raises(DatasetError):
        load_dataset(path)


def test_dataset_layout(mvs):
    doc = json.loads(dumps_dataset([mvs]))
    assert doc["schema_version"] == 1
    assert set(doc["cameras"][0]) == {"view_id", "fx", "fy", "cx", "cy", "R", "t", "width", "height"}
    view = doc["sequences"][0]["frames"][0]["views"][1]
    assert set(view) == {"view_id", "joints_2d", "visibility", "deficiency"}
    assert view["deficiency"] == {"kind": "missing", "params": {"dropout": 1.0}}


# --- plots -------------------------------------------------------------------


def test_svg_charts_are_wellformed():
    import xml.etree.ElementTree as ET

    ET.fromstring(plots.bar_chart({"a": 1.0, "b<": 2.5}, "t"))
    ET.fromstring(plots.line_chart([0, 1, 2], {"x": [0.1, 0.2, 0.3]}, "t", "x", "y"))


# --- run_experiment ----------------------------------------------------------


def test_run_experiment_outputs(tmp_path):
    cfg = parse_config(SMALL)
    rep = run_experiment(cfg, tmp_path, threads=1)
    for name in ("report.json", "report.csv", "mpjpe.svg", "weights.svg", "timing.json"):
        assert (tmp_path / name).exists()
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["toolkit"]["version"] == __version__
    assert set(data["metrics"]) == {"adaptive", "uniform", "none"}
    # paired: every mode scored on the same frames
    assert all(len(data["per_frame"]["modes"][m]["mpjpe"]) == 16 for m in data["metrics"])
    assert data["paired_vs_adaptive"]["uniform"]["adaptive_better"] + data["paired_vs_adaptive"]["uniform"][
        "adaptive_worse"
    ] + data["paired_vs_adaptive"]["uniform"]["ties"] == 16
    # self-consistency of overall averages
    for m in data["metrics"]:
        r = rep.metric_report(m)
        overall = sum(x.mpjpe * x.frames for x in r.rows) / r.frames
        assert abs(overall - r.overall_mpjpe) <= 1e-9 * max(1.0, overall)
    csv_lines = (tmp_path / "report.csv").read_text().splitlines()
    assert csv_lines[0] == "fusion_mode,action,mpjpe,p_mpjpe,frames"
    assert len(csv_lines) == 1 + 3 * 2
    assert "wall_clock" not in (tmp_path / "report.json").read_text()


def test_run_experiment_modes_share_observations(tmp_path):
    cfg = parse_config({**SMALL, "fusion": {"modes": ["uniform", "adaptive"]}})
    a = run_experiment(cfg, tmp_path / "a")
    b = run_experiment(parse_config({**SMALL, "fusion": {"modes": ["adaptive"]}}), tmp_path / "b")
    assert a.per_frame("adaptive").tolist() == b.per_frame("adaptive").tolist()


def test_run_experiment_with_dataset(tmp_path):
    cfg = parse_config({**SMALL, "output": {"dataset": True, "severity_sweep": [0]}})
    rep = run_experiment(cfg, tmp_path / "gen")
    seqs = load_datasets(tmp_path / "gen" / "dataset.json")
    again = run_experiment(cfg, tmp_path / "again", sequences=seqs)
    assert again.per_frame("adaptive").tolist() == rep.per_frame("adaptive").tolist()


def test_stage_errors_are_labelled(tmp_path):
    cfg = parse_config({**SMALL, "corruption": {"images": {"enabled": True, "occluder_masks": ["missing.pgm"]}}})
    with pytest.raises(StageError, match="images"):
        run_experiment(cfg, tmp_path)


def _artifacts(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()
            and p.name != "timing.json"}  # fmt: skip


def test_images_written_and_deterministic(tmp_path):
    cfg = parse_config(
        {**SMALL, "corruption": {"mode": "occlusion", "images": {"enabled": True, "frames_per_sequence": 1}}}
    )
    run_experiment(cfg, tmp_path / "one", threads=1)
    run_experiment(cfg, tmp_path / "eight", threads=8)
    a, b = _artifacts(tmp_path / "one"), _artifacts(tmp_path / "eight")
    pgms = [k for k in a if k.endswith(".pgm")]
    assert len(pgms) == 2 * 4
    assert sum("occlusion" in k for k in pgms) == 2 * 3
    assert a == b


# --- CLI ---------------------------------------------------------------------


def test_cli_evaluate(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(SMALL))
    out = tmp_path / "r"
    assert cli.main(["evaluate", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "report.json").exists() and (out / "report.csv").exists()
    assert "adaptive vs uniform" in capsys.readouterr().out


def test_cli_unknown_flag_and_subcommand(capsys):
    assert cli.main(["evaluate", "--bogus"]) == 2
    assert cli.main(["frobnicate"]) == 2
    assert cli.main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_cli_runtime_error_exit_1(tmp_path, capsys):
    assert cli.main(["evaluate", "--config", str(tmp_path / "nope.json")]) == 1
    assert "error" in capsys.readouterr().err


def test_cli_version(capsys):
    assert cli.main(["--version"]) == 0
    out = capsys.readouterr().out
    assert __version__ in out and "schema 1" in out


def test_cli_demo_fusion_weights_sum_to_one(capsys):
    assert cli.main(["demo-fusion", "--views", "4", "--noisy-view", "2", "--sigma", "20", "--seed", "7"]) == 0
    lines = capsys.readouterr().out.splitlines()
    weights = [float(l.split(":")[1].split()[0]) for l in lines if l.strip().startswith("view")]
    assert len(weights) == 4
    assert abs(sum(weights) - 1.0) < 1e-3
    assert weights[2] < 0.25
    total = float(next(l for l in lines if "sum" in l).split(":")[1])
    assert abs(total - 1.0) < 1e-12


def test_cli_generate_corrupt_evaluate_report(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(SMALL))
    assert cli.main(["generate", "--config", str(cfg), "--out", str(tmp_path / "g")]) == 0
    assert cli.main(["corrupt", "--config", str(cfg), "--dataset", str(tmp_path / "g" / "dataset.json"),
                     "--mode", "missing", "--out", str(tmp_path / "c")]) == 0  # fmt: skip
    seqs = load_datasets(tmp_path / "c" / "dataset.json")
    assert all(sum(seqs[0].deficiency[v][t].kind == "missing" for v in range(4)) == 1 for t in range(8))
    assert cli.main(["evaluate", "--config", str(cfg), "--dataset", str(tmp_path / "c" / "dataset.json"),
                     "--out", str(tmp_path / "e")]) == 0  # fmt: skip
    assert cli.main(["report", "--report", str(tmp_path / "e" / "report.json"), "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "p" / "report.csv").read_text() == (tmp_path / "e" / "report.csv").read_text()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "dapose", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and __version__ in proc.stdout


def test_external_occluder_masks(tmp_path):
    from dapose.pnm import write_pnm
    from dapose.skeleton import PixelGrid

    blob = np.zeros((30, 30), dtype=np.uint8)
    blob[5:25, 5:25] = 255
    write_pnm(PixelGrid(blob), tmp_path / "mask.pgm")
    cfg = parse_config({**SMALL, "corruption": {"mode": "occlusion", "images": {
        "enabled": True, "frames_per_sequence": 1, "occluder_masks": ["mask.pgm"]}}})  # fmt: skip
    rep = run_experiment(cfg, tmp_path / "out", base_dir=tmp_path)
    assert len(rep.data["images"]) == 8
