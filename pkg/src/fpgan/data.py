"""Synthetic datasets, manifest ingestion and seeded batching.

Two procedural stand-ins are provided:

* lesion data: a textured elliptical "organ" on a dark field, with bright
  elliptical blobs in diseased images. Label ``1`` means diseased and the
  ground-truth mask marks blob pixels exactly.
* attribute data: RGB images with independent binary attributes (fill
  color of a central shape, a bright frame, a corner marker), each recoverable
  from pixels by :func:`decode_attributes`.

Images are float arrays in [-1, 1] shaped ``(C, H, W)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage


class DataError(ValueError):
    """Raised on impossible generation parameters or malformed inputs."""


@dataclass
class LabeledImage:
    pixels: np.ndarray
    labels: np.ndarray
    id: str
    gt_mask: np.ndarray | None = None


@dataclass(frozen=True)
class SynthLesionSpec:
    image_size: int = 64
    n_healthy: int = 100
    n_diseased: int = 100
    lesion_radius_range: tuple[float, float] = (3.0, 7.0)
    lesion_intensity_delta: float = 0.9
    max_lesions: int = 2
    background: str = "smooth"
    seed: int = 0

    def validate(self) -> None:
        lo, hi = self.lesion_radius_range
        if self.image_size < 16:
            raise DataError("image_size must be >= 16")
        if self.n_healthy < 0 or self.n_diseased < 0:
            raise DataError("image counts must be nonnegative")
        if not 1 <= lo <= hi:
            raise DataError(f"invalid lesion radius range {self.lesion_radius_range}")
        # lesions must fit inside the organ ellipse (semi-axes >= 0.3 * size)
        if 2 * hi > 0.5 * self.image_size:
            raise DataError(
                f"lesion radius {hi} does not fit in a {self.image_size}px image"
            )
        if not 0 < self.lesion_intensity_delta <= 1.2:
            raise DataError("lesion_intensity_delta must lie in (0, 1.2]")
        if self.max_lesions < 1:
            raise DataError("max_lesions must be >= 1")
        if self.background not in BACKGROUNDS:
            raise DataError(f"unknown background {self.background!r}; choose from {sorted(BACKGROUNDS)}")


ATTRIBUTE_NAMES = ("warm_fill", "frame", "corner_marker")


@dataclass(frozen=True)
class SynthAttrSpec:
    image_size: int = 32
    n_images: int = 256
    attributes: tuple[str, ...] = ATTRIBUTE_NAMES
    seed: int = 0

    def validate(self) -> None:
        if self.image_size < 16:
            raise DataError("image_size must be >= 16")
        if self.n_images < 2:
            raise DataError("need at least two images so every attribute takes both values")
        unknown = set(self.attributes) - set(ATTRIBUTE_NAMES)
        if unknown or not self.attributes:
            raise DataError(f"attributes must be a nonempty subset of {ATTRIBUTE_NAMES}")


@dataclass
class DatasetManifest:
    root: Path
    rows: list[tuple[str, tuple[int, ...]]]
    attribute_names: list[str] = field(default_factory=list)


# -- lesion data -------------------------------------------------------------

def _smooth_texture(rng, size):
    noise = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=size / 16)
    noise /= np.abs(noise).max() + 1e-12
    return 0.12 * noise


def _flat_texture(rng, size):
    return np.full((size, size), 0.02 * rng.standard_normal())


BACKGROUNDS = {"smooth": _smooth_texture, "flat": _flat_texture}

ORGAN_LEVEL = -0.35


def _ellipse(size, cy, cx, ry, rx, angle=0.0):
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    dy, dx = yy - cy, xx - cx
    cos, sin = math.cos(angle), math.sin(angle)
    u = (dx * cos + dy * sin) / rx
    v = (-dx * sin + dy * cos) / ry
    return u * u + v * v <= 1.0


def _organ(rng, size):
    c = size / 2
    ry = size * rng.uniform(0.36, 0.44)
    rx = size * rng.uniform(0.30, 0.38)
    return _ellipse(size, c + rng.uniform(-1, 1), c + rng.uniform(-1, 1), ry, rx), (c, c, ry, rx)


def _place_lesion(rng, size, organ_geom, lo, hi, taken):
    cy0, cx0, ry0, rx0 = organ_geom
    for _ in range(200):
        ry, rx = rng.uniform(lo, hi), rng.uniform(lo, hi)
        r = max(ry, rx)
        # centre within the shrunken organ ellipse so the blob stays inside
        t, rad = rng.uniform(0, 2 * math.pi), math.sqrt(rng.uniform(0, 1))
        cy = cy0 + (ry0 - r - 1) * rad * math.sin(t)
        cx = cx0 + (rx0 - r - 1) * rad * math.cos(t)
        blob = _ellipse(size, cy, cx, ry, rx, rng.uniform(0, math.pi))
        grown = ndimage.binary_dilation(blob, iterations=2)
        if blob.sum() > 10 and not (grown & taken).any():
            return blob
    raise DataError("could not place a lesion; radius range too large for the image")


def generate_lesion_dataset(spec: SynthLesionSpec) -> list[LabeledImage]:
    """Healthy images first, then diseased, ids ``lesion_00000`` onward."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    size = spec.image_size
    texture = BACKGROUNDS[spec.background]
    out = []
    for i in range(spec.n_healthy + spec.n_diseased):
        diseased = i >= spec.n_healthy
        organ, geom = _organ(rng, size)
        img = np.full((size, size), -1.0)
        img[organ] = ORGAN_LEVEL + texture(rng, size)[organ]
        mask = np.zeros((size, size), dtype=bool)
        if diseased:
            for _ in range(int(rng.integers(1, spec.max_lesions + 1))):
                mask |= _place_lesion(rng, size, geom, *spec.lesion_radius_range, mask)
            img[mask] += spec.lesion_intensity_delta
        img = np.clip(img, -1.0, 1.0)
        out.append(LabeledImage(
            pixels=img[None].astype(np.float32),
            labels=np.array([int(diseased)], dtype=np.int64),
            id=f"lesion_{i:05d}",
            gt_mask=mask,
        ))
    return out


def decode_lesion_label(pixels: np.ndarray, threshold: float = ORGAN_LEVEL + 0.45) -> int:
    """1 if any pixel is brighter than healthy tissue can be."""
    return int((pixels.max(axis=0) > threshold).sum() > 10)


# -- attribute data ----------------------------------------------------------

WARM = np.array([0.85, -0.55, -0.65])
COOL = np.array([-0.65, -0.55, 0.85])
FRAME = np.array([0.9, 0.9, 0.9])
MARKER = np.array([0.9, 0.9, -0.9])


def _regions(size):
    """Boolean masks for the frame ring, corner marker and central window."""
    frame = np.zeros((size, size), dtype=bool)
    frame[:2, :] = frame[-2:, :] = frame[:, :2] = frame[:, -2:] = True
    m = max(3, size // 8)
    marker = np.zeros((size, size), dtype=bool)
    marker[3:3 + m, 3:3 + m] = True
    q = size // 4
    centre = np.zeros((size, size), dtype=bool)
    centre[size // 2 - q // 2:size // 2 + q // 2, size // 2 - q // 2:size // 2 + q // 2] = True
    return frame, marker, centre


def _render_attr_image(rng, size, bits: dict) -> np.ndarray:
    frame, marker, centre = _regions(size)
    gray = rng.uniform(-0.45, -0.1)
    img = np.full((3, size, size), gray) + 0.03 * rng.standard_normal((3, size, size))
    c = size / 2 + rng.uniform(-1.5, 1.5, size=2)
    r = size * rng.uniform(0.22, 0.28)
    shape = _ellipse(size, c[0], c[1], r, r * rng.uniform(0.85, 1.15))
    color = WARM if bits.get("warm_fill", 0) else COOL
    img[:, shape] = color[:, None] + 0.03 * rng.standard_normal((3, int(shape.sum())))
    if bits.get("frame", 0):
        img[:, frame] = FRAME[:, None]
    if bits.get("corner_marker", 0):
        img[:, marker] = MARKER[:, None]
    return np.clip(img, -1, 1).astype(np.float32)


def decode_attributes(pixels: np.ndarray, attributes=ATTRIBUTE_NAMES) -> np.ndarray:
    """Deterministic pixel rule recovering each attribute bit.

    * warm_fill: mean(red - blue) over the central window is positive
    * frame: mean brightness of the 2-pixel outer ring exceeds 0.4
    * corner_marker: mean of (red + green - blue) / 3 over the marker square exceeds 0.4
    """
    size = pixels.shape[-1]
    frame, marker, centre = _regions(size)
    rules = {
        "warm_fill": lambda p: (p[0][centre] - p[2][centre]).mean() > 0,
        "frame": lambda p: p[:, frame].mean() > 0.4,
        "corner_marker": lambda p: ((p[0] + p[1] - p[2])[marker] / 3).mean() > 0.4,
    }
    return np.array([int(rules[a](pixels)) for a in attributes], dtype=np.int64)


def generate_attr_dataset(spec: SynthAttrSpec) -> list[LabeledImage]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, d = spec.n_images, len(spec.attributes)
    labels = rng.integers(0, 2, size=(n, d))
    # every column must take both values
    for j in range(d):
        if labels[:, j].min() == labels[:, j].max():
            labels[rng.integers(n), j] ^= 1
    out = []
    for i in range(n):
        bits = dict(zip(spec.attributes, labels[i]))
        out.append(LabeledImage(
            pixels=_render_attr_image(rng, spec.image_size, bits),
            labels=labels[i].astype(np.int64),
            id=f"attr_{i:05d}",
        ))
    return out


# -- disk I/O ----------------------------------------------------------------

def to_uint8(pixels: np.ndarray) -> np.ndarray:
    """[-1, 1] float (C, H, W) to 8-bit (H, W) or (H, W, 3)."""
    arr = np.clip(np.rint((np.asarray(pixels, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)
    return arr[0] if arr.shape[0] == 1 else np.moveaxis(arr, 0, -1)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    """8-bit (H, W) or (H, W, 3) to float32 (C, H, W) via x / 127.5 - 1."""
    arr = np.asarray(arr)
    chw = arr[None] if arr.ndim == 2 else np.moveaxis(arr, -1, 0)
    return (chw.astype(np.float64) / 127.5 - 1.0).astype(np.float32)


def save_png(path, arr: np.ndarray) -> None:
    # explicit pnginfo-free save keeps bytes stable across runs
    Image.fromarray(arr).save(path, format="PNG", optimize=False)


def write_dataset(images: list[LabeledImage], out_dir, attribute_names) -> Path:
    """Write PNGs (plus ``_mask`` PNGs) and ``manifest.csv``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for item in images:
        name = f"{item.id}.png"
        save_png(out_dir / name, to_uint8(item.pixels))
        if item.gt_mask is not None:
            save_png(out_dir / f"{item.id}_mask.png", item.gt_mask.astype(np.uint8) * 255)
        rows.append((name, tuple(int(b) for b in item.labels)))
    path = out_dir / "manifest.csv"
    write_manifest(DatasetManifest(out_dir, rows, list(attribute_names)), path)
    return path


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", *manifest.attribute_names])
        for rel, bits in manifest.rows:
            writer.writerow([rel, *bits])


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    root = path.parent
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty manifest") from None
        if len(header) < 2 or header[0] != "path":
            raise DataError(f"{path}: header must be 'path,attr1,...', got {header}")
        names = header[1:]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            rel, raw = row[0], row[1:]
            if any(b not in ("0", "1") for b in raw):
                raise DataError(f"{path}:{lineno}: labels must be 0 or 1, got {raw}")
            if not (root / rel).is_file():
                raise DataError(f"{path}:{lineno}: missing image file {rel}")
            rows.append((rel, tuple(int(b) for b in raw)))
    return DatasetManifest(root, rows, names)


def read_manifest_images(manifest: DatasetManifest) -> list[LabeledImage]:
    out = []
    for rel, bits in manifest.rows:
        p = manifest.root / rel
        with Image.open(p) as im:
            arr = np.asarray(im.convert("L") if im.mode in ("L", "I", "I;16", "1", "P") else im.convert("RGB"))
        mask_path = p.with_name(p.stem + "_mask" + p.suffix)
        mask = None
        if mask_path.is_file():
            with Image.open(mask_path) as im:
                mask = np.asarray(im.convert("L")) > 127
        out.append(LabeledImage(from_uint8(arr), np.array(bits, dtype=np.int64), Path(rel).stem, mask))
    return out


# -- batching ----------------------------------------------------------------

class BatchStream:
    """Seeded epoch-permuted batches of ``(images, labels)`` as float32 arrays.

    Iterating yields one epoch; :meth:`next_batch` runs forever, reshuffling
    on each new epoch. The position is resumable via :meth:`state_dict`.
    """

    def __init__(self, source, batch_size: int, seed: int, augment_flip: bool = False,
                 drop_last: bool = False):
        if batch_size < 1:
            raise DataError("batch_size must be >= 1")
        items = list(source)
        if not items:
            raise DataError("empty dataset")
        self.images = np.stack([it.pixels for it in items]).astype(np.float32)
        self.labels = np.stack([np.asarray(it.labels) for it in items]).astype(np.float32)
        self.batch_size = batch_size
        self.seed = seed
        self.augment_flip = augment_flip
        self.drop_last = drop_last and len(items) >= batch_size
        self.epoch = 0
        self.position = 0

    def __len__(self):
        return len(self.images)

    def _order(self, epoch):
        return np.random.default_rng([self.seed, epoch]).permutation(len(self.images))

    def _batches(self, epoch):
        order = self._order(epoch)
        n = len(order)
        stop = n - n % self.batch_size if self.drop_last else n
        for start in range(0, stop, self.batch_size):
            yield start, order[start:start + self.batch_size]

    def _make(self, epoch, start, idx):
        x = self.images[idx]
        if self.augment_flip:
            flips = np.random.default_rng([self.seed, epoch, start, 1]).random(len(idx)) < 0.5
            x = x.copy()
            x[flips] = x[flips][..., ::-1]
        return x, self.labels[idx]

    def __iter__(self):
        epoch = self.epoch
        for start, idx in self._batches(epoch):
            yield self._make(epoch, start, idx)

    def next_batch(self):
        n = len(self.images)
        stop = n - n % self.batch_size if self.drop_last else n
        if self.position >= stop:
            self.epoch += 1
            self.position = 0
        order = self._order(self.epoch)
        start = self.position
        idx = order[start:start + self.batch_size]
        self.position += len(idx)
        return self._make(self.epoch, start, idx)

    def state_dict(self) -> dict:
        return {"epoch": self.epoch, "position": self.position}

    def load_state_dict(self, state: dict) -> None:
        self.epoch = int(state["epoch"])
        self.position = int(state["position"])


def iterate_batches(source, batch_size: int, seed: int, augment_flip: bool = False):
    """One epoch of batches in a seeded order; ``source`` is a list of images or a manifest."""
    if isinstance(source, DatasetManifest):
        source = read_manifest_images(source)
    return iter(BatchStream(source, batch_size, seed, augment_flip))
