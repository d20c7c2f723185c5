"""``detbench`` command-line entry point.

Exit codes: 0 success, 1 domain error (unplaceable asset, leak, undefined
AP, ...), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

from . import __version__
from .errors import DetbenchError
from .seeding import DEFAULT_SEED, SEED_ENV, derive_seed, resolve_seed

log = logging.getLogger("detbench")


class UsageError(Exception):
    pass


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=lambda s: int(s, 0), default=None,
                   help=f"master seed (default: ${SEED_ENV} or {DEFAULT_SEED})")
    g.add_argument("--jobs", type=int, default=1, help="worker parallelism cap")
    g.add_argument("--out", default="detbench_out", help="output directory; nothing is written outside it")
    g.add_argument("--json", action="store_true", help="print a machine-readable JSON summary")
    g.add_argument("-v", "--verbose", action="count", default=0)
    g.add_argument("--no-figures", action="store_true", help="skip matplotlib report figures")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="detbench", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"detbench {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("compose", parents=[common], help="generate semi-synthetic composites")
    p.add_argument("--backgrounds", required=True, help="directory of background images")
    p.add_argument("--assets", required=True, help="directory with real-cutout/ and render/ PNG assets")
    p.add_argument("-n", "--n-images", type=int, required=True)
    p.add_argument("--top-band", type=float, default=0.4)
    p.add_argument("--dual-prob", type=float, default=0.02)
    p.add_argument("--scale", type=float, nargs=2, default=(0.03, 0.12), metavar=("MIN", "MAX"))
    p.add_argument("--blur-sigma", type=float, nargs=2, default=(0.5, 1.5), metavar=("MIN", "MAX"))
    p.add_argument("--brightness-blend", type=float, default=1.0)
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("augment", parents=[common], help="apply the distortion augmentation suite")
    p.add_argument("--input", help="directory of images (labels alongside are copied unchanged)")
    p.add_argument("--aug-config", help="augmentation config file (INI); default suite if absent")
    p.add_argument("--aug-seed", type=lambda s: int(s, 0), default=None, help="augmentation seed (default: --seed)")
    p.add_argument("--dump-config", action="store_true", help="write the default config to OUT/augment.ini and exit")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("split", parents=[common], help="split an inventory into train/val/test")
    p.add_argument("--inventory", required=True, help="directory with real-normal/, real-difficult/, gen-real/, gen-render/")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("manifest", parents=[common], help="materialize a train/val strategy")
    p.add_argument("--strategy", required=True, choices=["rr", "rg", "gg", "gr", "mr", "all"])
    p.add_argument("--splits", help="splits.json from `split` (default: OUT/splits.json)")
    p.set_defaults(func=cmd_manifest)

    p = sub.add_parser("verify", parents=[common], help="check a manifest for leaks and missing files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--root", help="dataset root for file checks (omit to check disjointness only)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("eval", parents=[common], help="compute mAP@0.5")
    p.add_argument("--gt", required=True, help="ground-truth dir (<img>.txt)")
    p.add_argument("--det", required=True, help="detection dir (<img>.det.txt)")
    p.add_argument("--kind", default="test-normal", choices=["validation", "test-normal", "test-difficult"],
                   help="which dataset --gt/--det describe")
    p.add_argument("--difficult-gt")
    p.add_argument("--difficult-det")
    p.add_argument("--val-gt")
    p.add_argument("--val-det")
    p.add_argument("--model", default="model")
    p.add_argument("--iou", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("select", parents=[common], help="pick the best model from eval reports")
    p.add_argument("--reports", nargs="+", required=True)
    p.set_defaults(func=cmd_select)

    for name, func, helptext in (("run", cmd_run, "stream images through a detector backend"),
                                 ("bench", cmd_bench, "measure per-stage backend latency")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--source", help="image directory (sorted by name) or synthetic:N")
        p.add_argument("--backend", default="stub", help="stub | external:<command template>")
        p.add_argument("--stub-timings", type=float, nargs=3, default=(0.0, 0.0, 0.0),
                       metavar=("PRE", "INF", "POST"), help="fixed stub timings in ms")
        p.add_argument("--stub-delay-ms", type=float, default=0.0)
        p.add_argument("--timeout", type=float, default=30.0, help="external backend timeout [s]")
        p.set_defaults(func=func)
        if name == "run":
            p.add_argument("--interval-ms", type=float, default=0.0, help="source frame period")
            p.add_argument("--capacity", type=int, default=1)
            p.add_argument("--sync", action="store_true", help="step stages in order without threads")
        else:
            p.add_argument("--warmup", type=int, default=5)
            p.add_argument("--iters", type=int, default=50)
    return parser


# --- helpers -------------------------------------------------------------

def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _emit(args, summary: dict, human: str) -> None:
    if args.json:
        print(json.dumps(summary, sort_keys=True))
    else:
        print(human)


def _image_paths(root: Path):
    return sorted(p for p in root.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp"))


# --- commands ------------------------------------------------------------

def cmd_compose(args) -> int:
    from .compositor import CompositeParams, iter_dataset, load_asset_dir, load_background, save_png
    from .annotations import write_label_file

    try:
        params = CompositeParams(args.top_band, args.dual_prob, tuple(args.scale), tuple(args.blur_sigma),
                                 args.brightness_blend)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.n_images < 1:
        raise UsageError("-n must be >= 1")
    backgrounds = [load_background(p) for p in _image_paths(Path(args.backgrounds))]
    assets = load_asset_dir(args.assets)
    if not backgrounds:
        raise DetbenchError(f"no background images in {args.backgrounds}")
    if not assets:
        raise DetbenchError(f"no assets under {args.assets}/real-cutout or {args.assets}/render")
    seed = resolve_seed(args.seed)
    out = _out_dir(args)
    counts, manifest = {}, []
    # stream to disk so large runs never hold every composite in memory
    for entry, result in iter_dataset(backgrounds, assets, args.n_images, params, seed, jobs=args.jobs):
        sub = out / result.origin.value
        sub.mkdir(exist_ok=True)
        name = f"gen_{entry['index']:06d}"
        save_png(result.image, sub / f"{name}.png")
        (sub / f"{name}.txt").write_text(write_label_file(result.ground_truth), encoding="utf-8")
        entry["image"] = f"{result.origin.value}/{name}.png"
        manifest.append(entry)
        counts[result.origin.value] = counts.get(result.origin.value, 0) + 1
    _write_json(out / "compose_manifest.json", {
        "master_seed": seed,
        "params": {"top_band_fraction": params.top_band_fraction, "dual_insert_prob": params.dual_insert_prob,
                   "scale_range": list(params.scale_range), "blur_sigma_range": list(params.blur_sigma_range),
                   "brightness_blend": params.brightness_blend},
        "images": manifest,
    })
    summary = {"images": len(manifest), "origins": counts, "seed": seed}
    _emit(args, summary, f"composed {len(manifest)} images {counts} -> {out}")
    return 0


def cmd_augment(args) -> int:
    from .augment import AugmentationSpec, apply_spec
    from .compositor import load_rgb, save_png

    out = _out_dir(args)
    if args.aug_config:
        spec = AugmentationSpec.from_config(Path(args.aug_config).read_text(encoding="utf-8"))
    else:
        spec = AugmentationSpec.default()
    if args.dump_config:
        (out / "augment.ini").write_text(spec.to_config(), encoding="utf-8")
        _emit(args, {"config": str(out / "augment.ini")}, f"wrote {out / 'augment.ini'}")
        return 0
    if not args.input:
        raise UsageError("augment needs --input (or --dump-config)")
    seed = resolve_seed(args.aug_seed if args.aug_seed is not None else args.seed)
    log_entries = []
    for index, path in enumerate(_image_paths(Path(args.input))):
        image_seed = derive_seed(seed, index)
        image, applied = apply_spec(load_rgb(path), spec, image_seed)
        save_png(image, out / f"{path.stem}.png")
        label = path.with_suffix(".txt")
        if label.is_file():
            shutil.copyfile(label, out / label.name)
        log_entries.append({"image": path.name, "seed": image_seed,
                            "applied": [{"kernel": k, "params": p} for k, p in applied]})
    _write_json(out / "augment_log.json", {"aug_seed": seed, "images": log_entries})
    n_applied = sum(len(e["applied"]) for e in log_entries)
    summary = {"images": len(log_entries), "kernels_applied": n_applied, "aug_seed": seed}
    _emit(args, summary, f"augmented {len(log_entries)} images ({n_applied} kernel applications) -> {out}")
    return 0


def cmd_split(args) -> int:
    from .strategy import SplitSpec, scan_inventory, split

    inventory = scan_inventory(args.inventory)
    seed = resolve_seed(args.seed)
    sets = split(inventory, SplitSpec(seed=seed))
    out = _out_dir(args)
    _write_json(out / "splits.json", sets.to_dict())
    counts = {
        "train": {"real-normal": len(sets.real_train), "gen-real": len(sets.gen_real_train), "gen-render": len(sets.gen_render_train)},
        "val": {"real-normal": len(sets.real_val), "gen-real": len(sets.gen_real_val), "gen-render": len(sets.gen_render_val)},
        "test": {"real-normal": len(sets.real_test), "real-difficult": len(sets.real_difficult)},
    }
    if not args.no_figures:
        from .plotting import plot_split_counts
        plot_split_counts(counts, out / "split_counts.png")
    human = "\n".join(f"{k:5s} " + "  ".join(f"{g}={n}" for g, n in v.items()) for k, v in counts.items())
    _emit(args, {"seed": seed, "counts": counts}, human)
    return 0


def cmd_manifest(args) -> int:
    from .strategy import SplitSets, StrategyId, build_manifest

    out = _out_dir(args)
    splits_path = Path(args.splits) if args.splits else out / "splits.json"
    if not splits_path.is_file():
        raise UsageError(f"splits file {splits_path} not found; run `detbench split` first or pass --splits")
    sets = SplitSets.from_dict(json.loads(splits_path.read_text(encoding="utf-8")))
    ids = list(StrategyId) if args.strategy == "all" else [StrategyId.parse(args.strategy)]
    summary = {}
    for sid in ids:
        manifest = build_manifest(sid, sets)
        path = out / f"manifest_{sid.value.lower()}.json"
        path.write_text(manifest.to_json(), encoding="utf-8")
        summary[sid.value] = {"train": len(manifest.train), "val": len(manifest.val),
                              "test_normal": len(manifest.test_normal), "test_difficult": len(manifest.test_difficult),
                              "path": str(path)}
    human = "\n".join(f"{k}: train={v['train']} val={v['val']} test-N={v['test_normal']} test-D={v['test_difficult']}"
                      for k, v in summary.items())
    _emit(args, summary, human)
    return 0


def cmd_verify(args) -> int:
    from .strategy import ExperimentManifest, verify_manifest

    manifest = ExperimentManifest.from_dict(json.loads(Path(args.manifest).read_text(encoding="utf-8")))
    report = verify_manifest(manifest, args.root)
    out = _out_dir(args)
    _write_json(out / f"verify_{manifest.strategy.value.lower()}.json", report.to_dict())
    human = "PASS" if report.passed else "FAIL\n" + "\n".join(f"  {v.kind}: {v.path} {v.detail}" for v in report.violations)
    _emit(args, report.to_dict(), human)
    return 0 if report.passed else 1


def cmd_eval(args) -> int:
    from .evaluator import EvalReport, evaluate_dirs, reports_table_csv

    datasets = {args.kind: (args.gt, args.det)}
    for kind, g, d in (("test-difficult", args.difficult_gt, args.difficult_det), ("validation", args.val_gt, args.val_det)):
        if (g is None) != (d is None):
            raise UsageError(f"{kind}: pass both ground-truth and detection directories")
        if g is not None:
            if kind in datasets:
                raise UsageError(f"{kind} given twice")
            datasets[kind] = (g, d)
    results = {kind: evaluate_dirs(g, d, args.iou) for kind, (g, d) in datasets.items()}
    ap = {kind: r[0] for kind, r in results.items()}
    out = _out_dir(args)
    summary = {"model": args.model, "ap50": ap}
    if "test-normal" in ap and "test-difficult" in ap:
        report = EvalReport(args.model, ap["test-normal"], ap["test-difficult"], ap.get("validation"))
        summary = report.to_dict()
        (out / f"eval_{args.model}.csv").write_text(reports_table_csv([report]), encoding="utf-8")
    _write_json(out / f"eval_{args.model}.json", summary)
    if not args.no_figures:
        from .plotting import plot_pr_curve
        plot_pr_curve({k: (r[1], r[0]) for k, r in results.items()}, out / f"pr_{args.model}.png",
                      title=f"{args.model}: precision-recall (IoU {args.iou:g})")
    lines = [f"{kind}: AP {v:.6f}" for kind, v in ap.items()]
    if "test_average" in summary:
        lines.append(f"test avg {summary['test_average']:.6f}  test diff {summary['test_difference']:.6f}")
    _emit(args, summary, "\n".join(lines))
    return 0


def cmd_select(args) -> int:
    from .evaluator import EvalReport, reports_table_csv, select_model

    reports = [EvalReport.from_dict(json.loads(Path(p).read_text(encoding="utf-8"))) for p in args.reports]
    best = select_model(reports)
    out = _out_dir(args)
    (out / "selection.csv").write_text(reports_table_csv(reports), encoding="utf-8")
    summary = {"selected": best, "reports": [r.to_dict() for r in reports]}
    _write_json(out / "selection.json", summary)
    _emit(args, summary, best)
    return 0


def _make_backend(args):
    from .pipeline import ExternalBackend, StageTimings, StubBackend

    if args.backend == "stub":
        return StubBackend(default=((), StageTimings(*args.stub_timings)), delay_s=args.stub_delay_ms / 1000.0)
    if args.backend.startswith("external:"):
        cmd = args.backend[len("external:"):].strip()
        if not cmd:
            raise UsageError("external backend needs a command: --backend 'external:<cmd>'")
        return ExternalBackend(cmd, args.timeout)
    raise UsageError(f"unknown backend {args.backend!r} (use stub or external:<cmd>)")


def _source_images(args, default_n: int):
    from .pipeline import directory_images, synthetic_images

    src = args.source
    if src is None:
        return synthetic_images(default_n, (320, 320), resolve_seed(args.seed))
    if src.startswith("synthetic:"):
        return synthetic_images(int(src.split(":", 1)[1]), (320, 320), resolve_seed(args.seed))
    images = directory_images(src)
    if not images:
        raise DetbenchError(f"no images in {src}")
    return images


def cmd_run(args) -> int:
    from .annotations import write_detection_file
    from .pipeline import PipelineOptions, run_pipeline

    backend = _make_backend(args)
    images = _source_images(args, 10)
    out = _out_dir(args)
    det_dir = out / "detections"
    det_dir.mkdir(exist_ok=True)

    def sink(frame, msg):
        (det_dir / f"{frame.seq:06d}.det.txt").write_text(write_detection_file(msg.detections), encoding="utf-8")

    opts = PipelineOptions(capacity=args.capacity, frame_interval_s=args.interval_ms / 1000.0, threaded=not args.sync)
    summary = run_pipeline(images, backend, sink, opts).to_dict()
    _write_json(out / "run_summary.json", summary)
    _emit(args, summary, f"frames {summary['frames_in']}: processed {summary['processed']}, "
                         f"dropped {summary['dropped']}, failed {summary['failed']}")
    return 0


def cmd_bench(args) -> int:
    from .pipeline import bench

    backend = _make_backend(args)
    images = _source_images(args, 1)
    report = bench(backend, images, args.warmup, args.iters)
    out_arg = Path(args.out)
    if out_arg.suffix == ".json":
        out_arg.parent.mkdir(parents=True, exist_ok=True)
        report_path, fig_path = out_arg, out_arg.with_suffix(".png")
    else:
        out = _out_dir(args)
        report_path, fig_path = out / "latency_report.json", out / "latency_report.png"
    data = report.to_dict()
    _write_json(report_path, data)
    if not args.no_figures:
        from .plotting import plot_latency
        plot_latency(report, fig_path)
    human = (f"preprocess {report.preprocess.mean:.1f} ms  inference {report.inference.mean:.1f} ms  "
             f"postprocess {report.postprocess.mean:.1f} ms  total {report.total.mean:.1f} ms  FPS {data['fps']}")
    _emit(args, data, human)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"detbench {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DetbenchError, OSError, ValueError, KeyError) as exc:
        print(f"detbench {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
