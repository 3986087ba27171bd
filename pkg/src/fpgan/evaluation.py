"""Run a trained generator over a dataset and score it."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import detectloc as dl
from .data import LabeledImage, decode_attributes, save_png, to_uint8
from .models import translate


def translate_images(G, images: list[LabeledImage], targets, batch_size: int = 32) -> np.ndarray:
    """Translate every image to its row of ``targets``; returns float32 (N, C, H, W)."""
    targets = np.asarray(targets, dtype=np.float32)
    if targets.ndim == 1:
        targets = np.broadcast_to(targets, (len(images), targets.shape[0]))
    G.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            chunk = images[start:start + batch_size]
            x = torch.from_numpy(np.stack([im.pixels for im in chunk]).astype(np.float32))
            c = torch.from_numpy(np.array(targets[start:start + len(chunk)]))
            out.append(translate(G, x, c).numpy())
    G.train()
    return np.concatenate(out)


@dataclass
class LesionEvaluation:
    records: list[dl.DetectionRecord]
    roc: dl.RocResult
    froc: dl.FrocResult | None
    l1_mean: float
    l1_std: float
    diff_maps: list[np.ndarray] = field(repr=False, default_factory=list)
    froc_target: float = 1.0

    def summary(self) -> dict:
        return {
            "auc": self.roc.auc,
            "sensitivity_at_1fp": None if self.froc is None else self.froc.sensitivity_at(self.froc_target),
            "same_domain_l1_mean": self.l1_mean,
            "same_domain_l1_std": self.l1_std,
            "froc": None if self.froc is None else {
                "fps_per_image": [float(v) for v in self.froc.fps_per_image],
                "sensitivity": [float(v) for v in self.froc.sensitivity],
            },
        }


def evaluate_lesions(G, images: list[LabeledImage], healthy=(0,), k: int = 2, min_area: int = 10,
                     froc_target: float = 1.0, translated=None) -> LesionEvaluation:
    """Translate everything to the healthy domain and score the difference maps.

    Same-domain L1 is measured on the healthy inputs; the FROC is computed
    when ground-truth masks are available.
    """
    if translated is None:
        translated = translate_images(G, images, np.asarray(healthy, dtype=np.float32))
    records, diffs, per_image, pairs = [], [], [], []
    for im, out in zip(images, translated):
        m = dl.difference_map(im.pixels, out)
        diffs.append(m)
        label = int(np.asarray(im.labels).any())
        records.append(dl.DetectionRecord(im.id, dl.detection_score(m), label))
        if label == 0:
            pairs.append((im.pixels, out))
        if im.gt_mask is not None:
            cands = dl.extract_candidates(dl.quantize_binarize(m, k), m, min_area)
            per_image.append((cands, im.gt_mask))
    l1_mean, l1_std = dl.same_domain_l1(pairs) if pairs else (float("nan"), float("nan"))
    has_lesions = any(gt.any() for _, gt in per_image)
    froc = dl.froc(per_image) if has_lesions else None
    return LesionEvaluation(records, dl.roc(records), froc, l1_mean, l1_std, diffs, froc_target)


@dataclass
class AttributeEvaluation:
    l1_mean: float
    l1_std: float
    same_domain_accuracy: float
    cross_domain_accuracy: float
    per_attribute_cross: dict

    def summary(self) -> dict:
        return {
            "same_domain_l1_mean": self.l1_mean,
            "same_domain_l1_std": self.l1_std,
            "same_domain_decode_accuracy": self.same_domain_accuracy,
            "cross_domain_decode_accuracy": self.cross_domain_accuracy,
            "per_attribute_cross_accuracy": self.per_attribute_cross,
        }


def evaluate_attributes(G, images: list[LabeledImage], attribute_names) -> AttributeEvaluation:
    """Decode-rule accuracy for same-domain and single-attribute-flip translations.

    Same-domain accuracy is the fraction of (image, attribute) bits that
    survive ``G(x, c_x)``; cross-domain accuracy is the fraction of flipped
    bits that decode to their new value.
    """
    names = list(attribute_names)
    labels = np.stack([np.asarray(im.labels) for im in images]).astype(np.float32)
    same = translate_images(G, images, labels)
    l1_mean, l1_std = dl.same_domain_l1((im.pixels, out) for im, out in zip(images, same))
    decoded = np.stack([decode_attributes(o, names) for o in same])
    same_acc = float((decoded == labels).mean())
    per_attr = {}
    for j, name in enumerate(names):
        target = labels.copy()
        target[:, j] = 1 - target[:, j]
        out = translate_images(G, images, target)
        dec = np.array([decode_attributes(o, names)[j] for o in out])
        per_attr[name] = float((dec == target[:, j]).mean())
    cross = float(np.mean(list(per_attr.values())))
    return AttributeEvaluation(l1_mean, l1_std, same_acc, cross, per_attr)


# -- artifact export ---------------------------------------------------------

def difference_png(m: np.ndarray) -> np.ndarray:
    """Linear rescale of [0, max] to 8-bit; an all-zero map stays black."""
    top = float(m.max())
    if top <= 0:
        return np.zeros(m.shape, dtype=np.uint8)
    return np.clip(np.rint(m / top * 255), 0, 255).astype(np.uint8)


def write_translations(out_dir, images, translated, diffs) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for im, y, m in zip(images, translated, diffs):
        save_png(out_dir / f"{im.id}_translated.png", to_uint8(y))
        save_png(out_dir / f"{im.id}_diff.png", difference_png(m))


def write_curve_csv(path, xs, ys) -> None:
    with open(path, "w") as fh:
        fh.write("x,y\n")
        for x, y in zip(xs, ys):
            fh.write(f"{float(x)!r},{float(y)!r}\n")


def write_report(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def plot_curves(path, curves: dict, xlabel: str, ylabel: str, title: str = "", xlim=None) -> None:
    """Static line plot of ``{name: (xs, ys)}``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 4))
    for name, (xs, ys) in curves.items():
        ax.plot(xs, ys, label=name, drawstyle="steps-post" if "FP" in xlabel else "default")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if xlim is not None:
        ax.set_xlim(*xlim)
    ax.set_ylim(0, 1.02)
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
