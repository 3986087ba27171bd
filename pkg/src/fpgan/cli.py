"""Command-line entry point: ``fpgan <command> ...``.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import detectloc as dl
from . import evaluation as ev
from .config import RunConfig, is_attribute_dataset, load_run_config, write_resolved
from .data import (
    DataError,
    SynthAttrSpec,
    SynthLesionSpec,
    generate_attr_dataset,
    generate_lesion_dataset,
    load_manifest,
    read_manifest_images,
    write_dataset,
)
from .models import ConfigError
from .training import (
    MODES,
    CheckpointError,
    TrainingDiverged,
    load_checkpoint,
    parameter_digest,
    read_telemetry,
    train,
)

log = logging.getLogger("fpgan")


class UsageError(Exception):
    pass


def _seed(value):
    env = os.environ.get("FPGAN_SEED")
    return int(env) if env is not None else value


def _setup_log(out_dir: Path) -> None:
    # timestamps only ever go to this file so other outputs stay byte-stable
    out_dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out_dir / "fpgan.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)


# -- synth-data --------------------------------------------------------------

def cmd_synth_data(args) -> int:
    out = Path(args.out)
    seed = _seed(args.seed)
    if args.kind == "lesion":
        spec = SynthLesionSpec(image_size=args.image_size, n_healthy=args.n_healthy,
                               n_diseased=args.n_diseased, seed=seed,
                               lesion_radius_range=(args.radius_min, args.radius_max))
        images, names = generate_lesion_dataset(spec), ["diseased"]
    else:
        spec = SynthAttrSpec(image_size=args.image_size, n_images=args.n_images, seed=seed)
        images, names = generate_attr_dataset(spec), list(spec.attributes)
    write_dataset(images, out, names)
    resolved = {"command": "synth-data", "kind": args.kind, "spec": _jsonable(spec)}
    write_resolved(resolved, out)
    print(f"wrote {len(images)} images to {out}")
    return 0


def _jsonable(spec) -> dict:
    from dataclasses import asdict

    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(spec).items()}


# -- train -------------------------------------------------------------------

def _run_config(args) -> RunConfig:
    overrides = {
        "train.mode": getattr(args, "mode", None),
        "train.total_iterations": getattr(args, "iterations", None),
        "train.seed": getattr(args, "seed", None),
        "output_dir": getattr(args, "out", None),
    }
    return load_run_config(args.config, overrides)


def cmd_train(args) -> int:
    cfg = _run_config(args)
    out = Path(cfg.output_dir)
    _setup_log(out)
    write_resolved(cfg, out)
    images, _ = cfg.dataset.load("train")
    log.info("training %s for %d iterations", cfg.train.mode, cfg.train.total_iterations)
    state, _ = train(cfg.train, images, out_dir=out, progress=args.progress)
    print(f"final checkpoint {out / 'final.fpgan'} digest {parameter_digest(state.G, state.D)}")
    return 0


# -- translate / detect ------------------------------------------------------

def _parse_target(spec: str, d: int):
    """'healthy' -> zeros, 'source' -> each image's own label, else comma bits."""
    if spec in ("healthy", "source"):
        return spec
    try:
        bits = [int(b) for b in spec.split(",")]
    except ValueError:
        raise UsageError(f"invalid --target {spec!r}") from None
    if len(bits) != d or any(b not in (0, 1) for b in bits):
        raise UsageError(f"--target needs {d} comma-separated bits")
    return np.array(bits, dtype=np.float32)


def _targets(target, images, d):
    if isinstance(target, str) and target == "healthy":
        return np.zeros((len(images), d), dtype=np.float32)
    if isinstance(target, str):
        return np.stack([im.labels for im in images]).astype(np.float32)
    return np.broadcast_to(target, (len(images), d))


def cmd_translate(args) -> int:
    state = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    images = read_manifest_images(manifest)
    d = state.config.arch.domain_dim
    targets = _targets(_parse_target(args.target, d), images, d)
    translated = ev.translate_images(state.G, images, targets)
    diffs = [dl.difference_map(im.pixels, y) for im, y in zip(images, translated)]
    out = Path(args.out)
    ev.write_translations(out, images, translated, diffs)
    maxes = {im.id: float(m.max()) for im, m in zip(images, diffs)}
    ev.write_report(out / "translate_report.json", {
        "target": args.target,
        "max_difference": maxes,
        "max_difference_overall": max(maxes.values()),
    })
    write_resolved({"command": "translate", "checkpoint": str(args.checkpoint),
                    "manifest": str(args.manifest), "target": args.target}, out)
    print(f"translated {len(images)} images to {out}")
    return 0


def cmd_detect(args) -> int:
    state = load_checkpoint(args.checkpoint)
    images = read_manifest_images(load_manifest(args.manifest))
    d = state.config.arch.domain_dim
    translated = ev.translate_images(state.G, images, np.zeros(d, dtype=np.float32))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "detections.csv", "w", newline="") as fs, \
            open(out / "candidates.csv", "w", newline="") as fc:
        ws, wc = csv.writer(fs, lineterminator="\n"), csv.writer(fc, lineterminator="\n")
        ws.writerow(["image_id", "score", "label"])
        wc.writerow(["image_id", "area", "centroid_row", "centroid_col", "score"])
        for im, y in zip(images, translated):
            m = dl.difference_map(im.pixels, y)
            ws.writerow([im.id, repr(dl.detection_score(m)), int(np.asarray(im.labels).any())])
            for cand in dl.extract_candidates(dl.quantize_binarize(m, args.k), m, args.min_area):
                wc.writerow([im.id, cand.area, repr(cand.centroid[0]), repr(cand.centroid[1]),
                             repr(cand.score)])
    write_resolved({"command": "detect", "checkpoint": str(args.checkpoint),
                    "manifest": str(args.manifest), "k": args.k, "min_area": args.min_area}, out)
    print(f"wrote detections for {len(images)} images to {out}")
    return 0


# -- evaluate ----------------------------------------------------------------

def evaluate_checkpoint(state, images, names, out: Path, k=2, min_area=10, froc_target=1.0,
                        plots: bool = True) -> dict:
    """Write report.json (+ curve CSVs and plots for lesion data); return the report."""
    out.mkdir(parents=True, exist_ok=True)
    report = {"mode": state.config.mode, "iteration": state.iteration}
    if is_attribute_dataset(names):
        res = ev.evaluate_attributes(state.G, images, names)
        report.update(res.summary())
    else:
        res = ev.evaluate_lesions(state.G, images, k=k, min_area=min_area, froc_target=froc_target)
        report.update(res.summary())
        ev.write_curve_csv(out / "roc.csv", res.roc.fpr, res.roc.tpr)
        if res.froc is not None:
            ev.write_curve_csv(out / "froc.csv", res.froc.fps_per_image, res.froc.sensitivity)
        if plots:
            ev.plot_curves(out / "roc.png", {state.config.mode: (res.roc.fpr, res.roc.tpr)},
                           "false positive rate", "true positive rate", "ROC")
            if res.froc is not None:
                ev.plot_curves(out / "froc.png",
                               {state.config.mode: (res.froc.fps_per_image, res.froc.sensitivity)},
                               "FPs per image", "sensitivity", "FROC")
    ev.write_report(out / "report.json", report)
    return report


def cmd_evaluate(args) -> int:
    state = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    images = read_manifest_images(manifest)
    out = Path(args.out)
    report = evaluate_checkpoint(state, images, manifest.attribute_names, out, args.k,
                                 args.min_area, args.froc_target)
    write_resolved({"command": "evaluate", "checkpoint": str(args.checkpoint),
                    "manifest": str(args.manifest), "k": args.k, "min_area": args.min_area,
                    "froc_target": args.froc_target}, out)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


# -- ablate ------------------------------------------------------------------

ABLATION_COLUMNS = ["mode", "auc", "sensitivity_at_1fp", "same_domain_l1"]


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    out = Path(cfg.output_dir)
    _setup_log(out)
    write_resolved(cfg, out)
    train_images, names = cfg.dataset.load("train")
    test_images, _ = cfg.dataset.load("test")
    rows = []
    for mode in MODES:
        mode_cfg = replace(cfg.train, mode=mode)
        log.info("ablation: training %s", mode)
        state, _ = train(mode_cfg, train_images, out_dir=out / mode, progress=args.progress)
        e = cfg.evaluation
        report = evaluate_checkpoint(state, test_images, names, out / mode / "eval", e.k,
                                     e.min_area, e.froc_target)
        rows.append([mode, report.get("auc"), report.get("sensitivity_at_1fp"),
                     report["same_domain_l1_mean"]])
    write_ablation_csv(out / "ablation.csv", rows)
    print((out / "ablation.csv").read_text(), end="")
    return 0


def write_ablation_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ABLATION_COLUMNS)
        for row in rows:
            w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])


# -- plot --------------------------------------------------------------------

def _read_curve(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return [float(r["x"]) for r in rows], [float(r["y"]) for r in rows]


def cmd_plot(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = {Path(r).name if Path(r).name != "eval" else Path(r).parent.name: Path(r) for r in args.runs}
    made = []
    for curve, xlabel, ylabel in (("roc", "false positive rate", "true positive rate"),
                                  ("froc", "FPs per image", "sensitivity")):
        data = {name: _read_curve(d / f"{curve}.csv") for name, d in runs.items()
                if (d / f"{curve}.csv").is_file()}
        if data:
            ev.plot_curves(out / f"{curve}.png", data, xlabel, ylabel, curve.upper(),
                           xlim=(0, 3) if curve == "froc" else None)
            made.append(f"{curve}.png")
    telemetry = {name: d / "telemetry.csv" for name, d in runs.items() if (d / "telemetry.csv").is_file()}
    if telemetry:
        _plot_telemetry(out / "telemetry.png", telemetry)
        made.append("telemetry.png")
    if not made:
        raise UsageError("no roc.csv, froc.csv or telemetry.csv found in the given run directories")
    write_resolved({"command": "plot", "runs": [str(r) for r in args.runs]}, out)
    print("wrote " + ", ".join(made))
    return 0


def _plot_telemetry(path, files: dict) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    terms = ["avg_g_cycle", "avg_g_identity", "avg_d_adv", "avg_g_domain_fake"]
    fig, axes = plt.subplots(1, len(terms), figsize=(4 * len(terms), 3.2))
    for name, f in files.items():
        rows = read_telemetry(f)
        for ax, term in zip(axes, terms):
            pts = [(it, v) for it, k, v in rows if k == term]
            if pts:
                ax.plot(*zip(*pts), label=name)
    for ax, term in zip(axes, terms):
        ax.set_title(term.removeprefix("avg_"))
        ax.set_xlabel("iteration")
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=90, metadata={"Software": None})
    plt.close(fig)


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fpgan", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", help="generate a procedural dataset with a manifest")
    s.add_argument("kind", choices=["lesion", "attr"])
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--image-size", type=int, default=None)
    s.add_argument("--n-healthy", type=int, default=50)
    s.add_argument("--n-diseased", type=int, default=50)
    s.add_argument("--n-images", type=int, default=128)
    s.add_argument("--radius-min", type=float, default=3.0)
    s.add_argument("--radius-max", type=float, default=7.0)
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("train", help="train from a JSON run config")
    s.add_argument("--config", required=True)
    s.add_argument("--mode", choices=sorted(MODES))
    s.add_argument("--iterations", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--progress", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("translate", help="translate a manifest's images and export difference maps")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--target", default="healthy",
                   help="'healthy' (all zeros), 'source' (same domain) or comma-separated bits")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_translate)

    s = sub.add_parser("detect", help="image scores and lesion candidates by removal")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--k", type=int, default=2)
    s.add_argument("--min-area", type=int, default=10)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("evaluate", help="ROC/FROC/L1 report (lesion) or decode accuracy (attributes)")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--k", type=int, default=2)
    s.add_argument("--min-area", type=int, default=10)
    s.add_argument("--froc-target", type=float, default=1.0)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ablate", help="train and evaluate all four generator configurations")
    s.add_argument("--config", required=True)
    s.add_argument("--iterations", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--progress", action="store_true")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("plot", help="plot ROC/FROC/telemetry from run directories")
    s.add_argument("runs", nargs="+")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "image_size", "unset") is None:
        args.image_size = 64 if args.kind == "lesion" else 32
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"fpgan {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, DataError, TrainingDiverged, OSError, ValueError) as exc:
        print(f"fpgan {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
