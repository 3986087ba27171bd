"""Seeded desk-scale benchmarks: procedural lesions (four-mode ablation) and attributes.

Both presets are small enough for a CPU: 64x64 (lesion) or 32x32 RGB (attribute)
images, a narrow generator (base width 8, two residual blocks) and batch 8.
``run_benchmark`` trains each requested mode, evaluates it on the held-out
split and writes ``results.json`` next to per-mode checkpoints and telemetry.
"""
from __future__ import annotations

import json
import time
from dataclasses import replace
from pathlib import Path

from .config import DatasetConfig, EvalConfig, RunConfig, is_attribute_dataset, write_resolved
from .evaluation import evaluate_attributes, evaluate_lesions
from .losses import DATASET_PROFILES
from .models import ArchConfig
from .training import MODES, TrainConfig, parameter_digest, read_telemetry, train

ITERATIONS = 5000
ATTR_ITERATIONS = 20000
LESION_MODES = ("stargan", "stargan_delta", "fixedpoint", "fixedpoint_delta")
ATTR_MODES = ("stargan", "fixedpoint_delta")


def lesion_config(total_iterations: int = ITERATIONS, seed: int = 0) -> RunConfig:
    """200+200 training images, 50+50 test images; the brain-lesion loss profile."""
    return RunConfig(
        train=TrainConfig(
            mode="fixedpoint_delta",
            weights=DATASET_PROFILES["brats"],
            arch=ArchConfig(image_size=64, base_width=8, n_residual_blocks=2),
            batch_size=8,
            total_iterations=total_iterations,
            seed=seed,
            log_every=10,
        ),
        dataset=DatasetConfig(
            kind="lesion",
            train={"n_healthy": 200, "n_diseased": 200, "seed": 11},
            test={"n_healthy": 50, "n_diseased": 50, "seed": 12},
        ),
        evaluation=EvalConfig(),
        output_dir="runs/lesion_benchmark",
    )


def attr_config(total_iterations: int = ATTR_ITERATIONS, seed: int = 0) -> RunConfig:
    """Three procedural attributes on 32x32 RGB; the face-attribute loss profile.

    Longer than the lesion preset: with the strong identity weight the
    fixed-point generator learns cross-domain edits slowly.
    """
    return RunConfig(
        train=TrainConfig(
            mode="fixedpoint_delta",
            weights=DATASET_PROFILES["celeba"],
            arch=ArchConfig(image_size=32, image_channels=3, domain_dim=3, base_width=8, n_residual_blocks=2,
                            disc_base_width=32),
            batch_size=8,
            total_iterations=total_iterations,
            seed=seed,
            log_every=10,
            augment_flip=False,
        ),
        dataset=DatasetConfig(
            kind="attr",
            train={"image_size": 32, "n_images": 512, "seed": 21},
            test={"image_size": 32, "n_images": 128, "seed": 22},
        ),
        evaluation=EvalConfig(),
        output_dir="runs/attr_benchmark",
    )


PRESETS = {"lesion": (lesion_config, LESION_MODES), "attr": (attr_config, ATTR_MODES)}


def evaluate_state(state, images, names, evaluation: EvalConfig) -> dict:
    if is_attribute_dataset(names):
        return evaluate_attributes(state.G, images, names).summary()
    res = evaluate_lesions(state.G, images, k=evaluation.k, min_area=evaluation.min_area,
                           froc_target=evaluation.froc_target)
    summary = res.summary()
    summary.pop("froc")
    # healthy inputs translated to the healthy domain: the largest same-domain change
    summary["same_domain_max_difference"] = max(r.score for r in res.records if r.label == 0)
    return summary


def moving_average_change(telemetry_path, term: str = "g_identity", start: int = 100) -> dict:
    """EMA of ``term`` at iteration ``start`` (or the first logged after it) and at the end."""
    pts = [(it, v) for it, k, v in read_telemetry(telemetry_path) if k == f"avg_{term}"]
    if not pts:
        return {}
    early = next((v for it, v in pts if it >= start), pts[-1][1])
    return {"start_iteration": start, "start": early, "end_iteration": pts[-1][0], "end": pts[-1][1]}


def run_benchmark(kind: str, out_dir, modes=None, total_iterations: int | None = None,
                  seed: int = 0, repeat=(), progress: bool = False) -> dict:
    """Train and evaluate ``modes`` on preset ``kind``; returns (and writes) the results.

    Modes listed in ``repeat`` are trained a second time from scratch and the
    second run's parameter digest is stored as ``repeat_digest``.
    """
    make, default_modes = PRESETS[kind]
    cfg = make(seed=seed) if total_iterations is None else make(total_iterations, seed)
    total_iterations = cfg.train.total_iterations
    out = Path(out_dir)
    write_resolved(replace(cfg, output_dir=str(out)), out)
    train_images, names = cfg.dataset.load("train")
    test_images, _ = cfg.dataset.load("test")
    results = {"kind": kind, "total_iterations": total_iterations, "seed": seed, "modes": {}}
    for mode in modes or default_modes:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        run_dir = out / mode
        t0 = time.perf_counter()
        state, _ = train(replace(cfg.train, mode=mode), train_images, out_dir=run_dir, progress=progress)
        seconds = time.perf_counter() - t0
        entry = evaluate_state(state, test_images, names, cfg.evaluation)
        entry["train_seconds"] = round(seconds, 1)
        entry["digest"] = parameter_digest(state.G, state.D)
        if MODES[mode][1]:
            entry["identity_ema"] = moving_average_change(run_dir / "telemetry.csv")
        if mode in repeat:
            again, _ = train(replace(cfg.train, mode=mode), train_images, progress=progress)
            entry["repeat_digest"] = parameter_digest(again.G, again.D)
        results["modes"][mode] = entry
        (out / "results.json").write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
    return results
