"""Command-line entry point.

Subcommands: gen-synthetic, build-dataset, annotate-serve, train,
evaluate, ablate, invert-table, report. Artifact-producing runs write a
manifest.json into their output directory. Exit codes: 0 success, 1
runtime failure (error name on stderr), 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path

from lkalert import __version__, canlog, dataset, metrics, trainer, windowing
from lkalert.encoder import EncoderConfig
from lkalert.errors import LKAlertError
from lkalert.harness import configfile, pipeline, synthetic
from lkalert.harness.manifest import RunManifest, write_manifest


def _common(parser: argparse.ArgumentParser, out_required: bool = True) -> None:
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", type=Path, default=None, help="flat key=value config file")
    parser.add_argument("--out", type=Path, required=out_required, help="output directory")


def _load_config(path: Path | None) -> dict[str, str]:
    if path is None:
        return {}
    values = configfile.load_config(path)
    configfile.check_known_keys(
        values, windowing.WindowConfig, EncoderConfig, trainer.TrainConfig
    )
    return values


def _manifest(args, command: str, inputs: list[str], outputs: list[str], config: dict) -> None:
    manifest = RunManifest(
        command=command,
        config=config,
        seeds={"master": args.seed},
        inputs=inputs,
        outputs=outputs,
    )
    write_manifest(args.out, manifest.finish())


# ---------------------------------------------------------------------------
# Subcommand handlers


def cmd_gen_synthetic(args) -> int:
    cfg = _load_config(args.config)
    args.out.mkdir(parents=True, exist_ok=True)
    samples = synthetic.generate_dataset(
        args.out,
        count=args.count,
        seed=args.seed,
        image_size=args.image_size,
        rain_lo=args.rain_min,
        rain_hi=args.rain_max,
        val_fraction=args.val_fraction,
    )
    yes = sum(1 for s in samples if s.label == "Yes")
    _manifest(args, "gen-synthetic", [], [str(args.out / "dataset.jsonl")], cfg)
    print(f"wrote {len(samples)} samples ({yes} Yes / {len(samples) - yes} No) to {args.out}")
    return 0


def _scan_frames(frames_dir: Path) -> dict[tuple[str, int], dict[str, Path]]:
    found: dict[tuple[str, int], dict[str, Path]] = {}
    prefixes = {"frame_": "image", "mask_bin_": "binary", "mask_ins_": "instance"}
    for source_dir in sorted(p for p in frames_dir.iterdir() if p.is_dir()):
        for file in sorted(source_dir.glob("*.png")):
            for prefix, role in prefixes.items():
                if file.name.startswith(prefix):
                    ms = int(file.stem[len(prefix):])
                    found.setdefault((source_dir.name, ms), {})[role] = file
    return found


def cmd_build_dataset(args) -> int:
    cfg_map = _load_config(args.config)
    wcfg = configfile.build_dataclass(windowing.WindowConfig, cfg_map)
    args.out.mkdir(parents=True, exist_ok=True)

    all_windows: list[windowing.EventWindow] = []
    series_index: dict[str, canlog.TelemetrySeries] = {}
    skipped = 0
    for telemetry_path in args.telemetry:
        series = canlog.parse_log(telemetry_path.read_bytes(), source_id=telemetry_path.stem)
        series_index[series.source_id] = series
        events = windowing.detect_events(series, wcfg)
        failure_windows = []
        for event in events:
            try:
                failure_windows.append(windowing.extract_window(series, event, wcfg))
            except windowing.InsufficientContext:
                skipped += 1
        normal_count = args.normal_per_drive
        if normal_count is None:
            normal_count = len(failure_windows)
        normal_windows = windowing.sample_normal_windows(
            series, events, wcfg, count=normal_count, seed=args.seed
        )
        all_windows.extend(failure_windows)
        all_windows.extend(normal_windows)

    scanned = _scan_frames(args.frames)
    frame_index: dict[tuple[str, int], dataset.FrameRefs] = {}
    copies: dict[Path, str] = {}
    for key, roles in scanned.items():
        if "image" not in roles:
            continue  # mask-only grid points count as missing frames
        refs = {}
        for role in ("image", "binary", "instance"):
            src = roles.get(role)
            if src is None:
                refs[role] = None
            else:
                rel = f"frames/{key[0]}/{src.name}"
                copies[src] = rel
                refs[role] = rel
        frame_index[key] = dataset.FrameRefs(
            image_ref=refs["image"],
            binary_mask_ref=refs["binary"],
            instance_mask_ref=refs["instance"],
        )

    samples = dataset.assemble(all_windows, frame_index, series_index)
    for src, rel in sorted(copies.items(), key=lambda kv: kv[1]):
        target = args.out / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(src, target)

    if args.apply_annotations is not None:
        annotations = dataset.read_annotations(args.apply_annotations)
        samples = dataset.apply_annotations(samples, annotations)

    train, val = dataset.split(samples, val_fraction=args.val_fraction, seed=args.seed)
    by_id = {s.sample_id: s for s in train + val}
    final = [by_id[s.sample_id] for s in samples if s.sample_id in by_id]
    dataset.write_dataset(final, args.out / "dataset.jsonl")

    kept_ids = {s.sample_id for s in final}
    windows_meta = []
    for w_idx, window in enumerate(all_windows):
        members = [
            f"{window.source_id}:w{w_idx:04d}:f{f_idx:02d}"
            for f_idx in range(len(window.frame_times))
        ]
        members = [m for m in members if m in kept_ids]
        if members:
            windows_meta.append(
                {
                    "id": f"{window.source_id}:w{w_idx:04d}",
                    "source_id": window.source_id,
                    "event_frame_index": wcfg.event_frame_index,
                    "kind": window.event.kind.value,
                    "event_timestamp": window.event.timestamp,
                    "sample_ids": members,
                }
            )
    (args.out / "windows.json").write_text(
        json.dumps({"windows": windows_meta}, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    _manifest(
        args,
        "build-dataset",
        [str(p) for p in args.telemetry] + [str(args.frames)],
        [str(args.out / "dataset.jsonl")],
        cfg_map,
    )
    print(
        f"wrote {len(final)} samples across {len(windows_meta)} windows to {args.out}"
        + (f" ({skipped} events skipped: insufficient context)" if skipped else "")
    )
    return 0


def cmd_annotate_serve(args) -> int:
    import uvicorn

    from lkalert.harness.service import create_app

    ui_dir = args.ui_dir
    if ui_dir is None:
        candidate = Path("frontend")
        ui_dir = candidate if (candidate / "index.html").is_file() else None
    app = create_app(args.data, static_dir=ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def _train_config(args, cfg_map: dict[str, str], guided: bool | None = None) -> trainer.TrainConfig:
    return configfile.build_dataclass(
        trainer.TrainConfig,
        cfg_map,
        seed=args.seed,
        guided=guided,
        max_steps=args.max_steps,
        eval_every=args.eval_every,
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        lora_rank=args.rank,
        lora_alpha=args.alpha,
    )


def cmd_train(args) -> int:
    cfg_map = _load_config(args.config)
    tcfg = _train_config(args, cfg_map, guided=not args.unguided)
    ecfg = configfile.build_dataclass(EncoderConfig, cfg_map, guided=tcfg.guided)
    result = pipeline.train_pipeline(args.data, args.out, tcfg, ecfg)
    _manifest(
        args,
        "train",
        [str(args.data)],
        [str(result.checkpoint_path), str(result.vocab_path), str(result.log_path)],
        cfg_map,
    )
    if result.log:
        print(f"final training loss: {result.log[-1].mean_nll:.4f} nats/token")
    if result.final_report is not None:
        print(metrics.render_table_row("trained", result.final_report))
    return 0


def cmd_evaluate(args) -> int:
    report = pipeline.evaluate_checkpoint(args.checkpoint, args.data, split=args.split)
    args.report.parent.mkdir(parents=True, exist_ok=True)
    args.report.write_text(report.to_json(), encoding="utf-8")
    if args.out is None:
        args.out = args.report.parent
    args.out.mkdir(parents=True, exist_ok=True)
    _manifest(args, "evaluate", [str(args.checkpoint), str(args.data)], [str(args.report)], {})
    print(metrics.render_table_row(args.model, report))
    return 0


def cmd_ablate(args) -> int:
    cfg_map = _load_config(args.config)
    args.out.mkdir(parents=True, exist_ok=True)
    reports = {}
    for mode, guided in (("guided", True), ("unguided", False)):
        tcfg = _train_config(args, cfg_map, guided=guided)
        ecfg = configfile.build_dataclass(EncoderConfig, cfg_map, guided=guided)
        run_dir = args.out / mode
        pipeline.train_pipeline(args.data, run_dir, tcfg, ecfg)
        report = pipeline.evaluate_checkpoint(run_dir / "checkpoint.npz", args.data)
        (run_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
        reports[mode] = report

    comparison = {mode: r.to_dict() for mode, r in reports.items()}
    (args.out / "ablation.json").write_text(
        json.dumps(comparison, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    _manifest(args, "ablate", [str(args.data)], [str(args.out / "ablation.json")], cfg_map)
    print(metrics.render_table_row("guided", reports["guided"]))
    print(metrics.render_table_row("unguided", reports["unguided"], header=False))
    delta = reports["guided"].accuracy - reports["unguided"].accuracy
    print(f"guided - unguided accuracy: {delta:+.2f} points")
    return 0


def cmd_invert_table(args) -> int:
    if args.model is not None:
        if args.model not in metrics.REFERENCE_ROWS:
            known = ", ".join(sorted(metrics.REFERENCE_ROWS))
            raise LKAlertError(f"unknown model {args.model!r}; known: {known}")
        row = metrics.REFERENCE_ROWS[args.model]
    else:
        if None in (args.accuracy, args.precision, args.recall, args.f1):
            raise LKAlertError("provide --model or all of --accuracy/--precision/--recall/--f1")
        row = metrics.ReportedRow(args.accuracy, args.precision, args.recall, args.f1)
    matrices = metrics.invert_report(row, args.n_pos, args.n_neg)
    payload = []
    for counts in matrices:
        deviation = metrics.inversion_deviation(counts, row)
        payload.append({"tp": counts.tp, "fp": counts.fp, "tn": counts.tn, "fn": counts.fn,
                        "max_deviation": deviation})
        print(
            f"tp={counts.tp} fp={counts.fp} tn={counts.tn} fn={counts.fn} "
            f"(max metric deviation {deviation:.4f})"
        )
    if args.json_out is not None:
        args.json_out.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_report(args) -> int:
    report = metrics.EvalReport.from_dict(json.loads(args.report.read_text(encoding="utf-8")))
    print(metrics.render_table_row(args.model, report))
    return 0


# ---------------------------------------------------------------------------
# Parser wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lkalert", description=__doc__)
    parser.add_argument("--version", action="version", version=f"lkalert {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="render a synthetic dataset tree")
    _common(p)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--rain-min", type=float, default=0.7)
    p.add_argument("--rain-max", type=float, default=1.0)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("build-dataset", help="mine events from telemetry and assemble samples")
    _common(p)
    p.add_argument("--telemetry", type=Path, nargs="+", required=True)
    p.add_argument("--frames", type=Path, required=True, help="frames/<source_id>/ directory tree")
    p.add_argument("--normal-per-drive", type=int, default=None)
    p.add_argument("--apply-annotations", type=Path, default=None)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("annotate-serve", help="serve the annotation API and UI")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8777)
    p.add_argument("--ui-dir", type=Path, default=None)
    p.set_defaults(func=cmd_annotate_serve)

    p = sub.add_parser("train", help="train adapters on a dataset directory")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--unguided", action="store_true")
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset split")
    _common(p, out_required=False)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.add_argument("--report", type=Path, default=Path("report.json"))
    p.add_argument("--model", default="checkpoint")
    p.set_defaults(func=cmd_evaluate)

    # Ablation defaults are the settings validated to separate the two
    # modes cleanly on the 200-sample synthetic datasets.
    p = sub.add_parser("ablate", help="train and evaluate guided vs unguided variants")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--max-steps", type=int, default=2500)
    p.add_argument("--eval-every", type=int, default=250)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--rank", type=int, default=8)
    p.add_argument("--alpha", type=float, default=16.0)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("invert-table", help="integer confusion matrices behind a metric row")
    p.add_argument("--model", default=None)
    p.add_argument("--accuracy", type=float, default=None)
    p.add_argument("--precision", type=float, default=None)
    p.add_argument("--recall", type=float, default=None)
    p.add_argument("--f1", type=float, default=None)
    p.add_argument("--n-pos", type=int, default=metrics.REFERENCE_SPLIT[0])
    p.add_argument("--n-neg", type=int, default=metrics.REFERENCE_SPLIT[1])
    p.add_argument("--json-out", type=Path, default=None)
    p.set_defaults(func=cmd_invert_table)

    p = sub.add_parser("report", help="render a stored EvalReport as a table row")
    p.add_argument("--report", type=Path, required=True)
    p.add_argument("--model", default="model")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LKAlertError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
