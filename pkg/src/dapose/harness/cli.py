"""Command-line entry point.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .. import __version__
from ..corruption import MODES, Severity, assign_deficiency, degrade_observations
from ..fusion import adaptive_estimate
from ..metrics import MetricReport
from .. import rng as _rng
from . import plots
from .config import ExperimentConfig, load_config, parse_config
from .dataset import SCHEMA_VERSION, load_datasets, save_datasets
from .runner import prepare_sequences, resolve_threads, run_experiment, severity_from


def _config(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = parse_config({"seed": 0})
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    return cfg


def _out(args, cfg: ExperimentConfig | None = None) -> Path:
    out = Path(args.out or (cfg.output.dir if cfg else "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args) -> int:
    cfg = _config(args)
    if args.frames is not None:
        cfg = cfg.model_copy(update={"motion": cfg.motion.model_copy(update={"frames": args.frames})})
    clean_cfg = cfg.model_copy(update={"corruption": cfg.corruption.model_copy(update={"mode": "none"})})
    prepared = prepare_sequences(clean_cfg, resolve_threads(cfg))
    out = _out(args, cfg)
    save_datasets([p.clean for p in prepared], out / "dataset.json", meta={"seed": cfg.seed})
    print(f"wrote {out / 'dataset.json'} ({len(prepared)} sequences)")
    return 0


def cmd_corrupt(args) -> int:
    cfg = _config(args)
    sequences = load_datasets(args.dataset)
    severity = severity_from(cfg)
    seed = cfg.seed
    degraded = []
    for i, mvs in enumerate(sequences):
        table = [
            assign_deficiency(mvs.view_count, args.mode, _rng.derive_seed(seed, "assign", i, -1, t))
            for t in range(mvs.frame_count)
        ]
        degraded.append(degrade_observations(mvs, table, severity, seed, i))
    out = _out(args, cfg)
    save_datasets(degraded, out / "dataset.json", meta={"seed": seed, "mode": args.mode})
    print(f"wrote {out / 'dataset.json'} ({args.mode} protocol)")
    return 0


def _print_metrics(metrics: dict) -> None:
    for mode, d in metrics.items():
        rep = MetricReport.from_dict(d)
        print(f"[{mode}]")
        print(f"  {'action':<10} {'MPJPE':>10} {'P-MPJPE':>10} {'frames':>7}")
        for r in rep.rows:
            print(f"  {r.action:<10} {r.mpjpe:10.2f} {r.p_mpjpe:10.2f} {r.frames:7d}")
        print(f"  {'overall':<10} {rep.overall_mpjpe:10.2f} {rep.overall_p_mpjpe:10.2f} {rep.frames:7d}")


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    out = _out(args, cfg)
    sequences = load_datasets(args.dataset) if args.dataset else None
    base = Path(args.config).parent if args.config else None
    report = run_experiment(cfg, out, threads=args.threads, sequences=sequences, base_dir=base)
    _print_metrics(report.data["metrics"])
    for mode, p in report.data["paired_vs_adaptive"].items():
        print(f"adaptive vs {mode}: better on {p['adaptive_better']} / worse on {p['adaptive_worse']} frames, "
              f"sign test p = {p['sign_test_p']:.3g}")  # fmt: skip
    print(f"wrote {out / 'report.json'} and {out / 'report.csv'}")
    return 0


def cmd_report(args) -> int:
    with open(args.report, encoding="utf-8") as fh:
        data = json.load(fh)
    order = data.get("config", {}).get("fusion", {}).get("modes") or sorted(data["metrics"])
    data["metrics"] = {m: data["metrics"][m] for m in order if m in data["metrics"]}
    _print_metrics(data["metrics"])
    if args.out:
        out = _out(args)
        csv_lines = ["fusion_mode,action,mpjpe,p_mpjpe,frames"]
        for mode, d in data["metrics"].items():
            for r in MetricReport.from_dict(d).rows:
                csv_lines.append(f"{mode},{r.action},{r.mpjpe!r},{r.p_mpjpe!r},{r.frames}")
        (out / "report.csv").write_text("\n".join(csv_lines) + "\n", encoding="utf-8")
        svg = plots.bar_chart({m: d["overall"]["mpjpe"] for m, d in data["metrics"].items()}, "Mean MPJPE by fusion mode")
        (out / "mpjpe.svg").write_text(svg, encoding="utf-8")
        print(f"wrote {out / 'report.csv'} and {out / 'mpjpe.svg'}")
    return 0


def cmd_demo_fusion(args) -> int:
    if not 0 <= args.noisy_view < args.views:
        raise ValueError(f"--noisy-view must lie in [0, {args.views})")
    cfg = _config(args)
    cfg = cfg.model_copy(
        update={
            "rig": cfg.rig.model_copy(update={"views": args.views, "preset": "circular"}),
            "motion": cfg.motion.model_copy(update={"actions": ["walk"], "frames": args.frames}),
            "corruption": cfg.corruption.model_copy(update={"mode": "none"}),
        }
    )
    mvs = prepare_sequences(cfg, 1)[0].clean
    kinds = ["clean"] * args.views
    kinds[args.noisy_view] = "gaussian"
    degraded = degrade_observations(mvs, kinds, Severity(gaussian=args.sigma), cfg.seed)
    w = adaptive_estimate(degraded).weight_matrix()
    mean = w.mean(axis=0)
    print(f"mean adaptive weights over {w.shape[0]} frames (view {args.noisy_view} noisy, sigma {args.sigma:g} px):")
    for v, x in enumerate(mean):
        flag = "  <- noisy" if v == args.noisy_view else ""
        print(f"  view {v}: {x:.4f}{flag}")
    print(f"  sum: {mean.sum():.12f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dapose", description="Deficiency-aware multi-view pose fusion toolkit")
    parser.add_argument("--version", action="version", version=f"dapose {__version__} (dataset schema {SCHEMA_VERSION})")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--seed", type=int, help="override the master seed")
        if out:
            p.add_argument("--out", help="output directory")

    p = sub.add_parser("generate", help="synthesize clean multi-view sequences into dataset.json")
    common(p)
    p.add_argument("--frames", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("corrupt", help="apply the view-assignment protocol to a dataset")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--mode", choices=MODES, default="noise")
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("evaluate", help="run an experiment and write report.json / report.csv")
    common(p)
    p.add_argument("--dataset", help="evaluate this dataset instead of generating one")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="print a report and optionally re-export CSV/SVG")
    p.add_argument("--report", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("demo-fusion", help="show adaptive weights with one noisy view")
    common(p)
    p.add_argument("--views", type=int, default=4)
    p.add_argument("--noisy-view", type=int, default=0)
    p.add_argument("--sigma", type=float, default=20.0)
    p.add_argument("--frames", type=int, default=100)
    p.set_defaults(func=cmd_demo_fusion)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001
        print(f"dapose {args.command}: error: {exc}", file=sys.stderr)
        return 1


cli_dispatch = main


if __name__ == "__main__":
    raise SystemExit(main())
