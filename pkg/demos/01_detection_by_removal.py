"""
Detection and localization by removal
=====================================

The evaluation pipeline needs no trained network to be understood.  Here an
"oracle" translation (the same synthetic images rendered without lesions)
stands in for a generator, and every stage is shown on its own: difference
map, image score, 2-means binarization, candidates, ROC and FROC.
"""
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from fpgan import detectloc as dl
from fpgan.data import SynthLesionSpec, generate_lesion_dataset

out = Path("demo_output")
out.mkdir(exist_ok=True)

# %%
# Twenty images, half with lesions.  Rendering the same seed with a vanishing
# lesion intensity gives the lesion-free version of every image.
spec = SynthLesionSpec(n_healthy=10, n_diseased=10, seed=3)
images = generate_lesion_dataset(spec)
clean = generate_lesion_dataset(SynthLesionSpec(n_healthy=10, n_diseased=10, seed=3,
                                                lesion_intensity_delta=1e-9))

# A translation that removes only part of each lesion and adds a little noise
# everywhere is a more honest stand-in than a perfect one.
rng = np.random.default_rng(0)
translated = [0.5 * im.pixels + 0.5 * c.pixels + rng.normal(0, 0.02, im.pixels.shape)
              for im, c in zip(images, clean)]

# %%
# Difference map and image-level score (its maximum).
diffs = [dl.difference_map(im.pixels, y) for im, y in zip(images, translated)]
records = [dl.DetectionRecord(im.id, dl.detection_score(m), int(im.labels[0]))
           for im, m in zip(images, diffs)]
curve = dl.roc(records)
print(f"image-level AUC: {curve.auc:.3f}")

# %%
# Lesion level: binarize each map with optimal 1-D 2-means, keep 8-connected
# components larger than 10 pixels, score each by its peak difference.
per_image = []
for im, m in zip(images, diffs):
    mask = dl.quantize_binarize(m, k=2)
    per_image.append((dl.extract_candidates(mask, m, min_area=10), im.gt_mask))
froc = dl.froc(per_image)
print(f"sensitivity at 1 FP/image: {froc.sensitivity_at(1.0):.3f}")

# %%
# One diseased example, stage by stage.
i = next(j for j, im in enumerate(images) if im.labels[0])
mask = dl.quantize_binarize(diffs[i], 2)
fig, ax = plt.subplots(1, 4, figsize=(12, 3))
for a, img, title in zip(ax, [images[i].pixels[0], translated[i][0], diffs[i], mask],
                         ["input", "translated", "difference", "2-means mask"]):
    a.imshow(img, cmap="gray")
    a.set_title(title)
    a.axis("off")
for cand in per_image[i][0]:
    ax[3].plot(cand.centroid[1], cand.centroid[0], "r+", ms=12)
fig.tight_layout()
fig.savefig(out / "detection_stages.png", dpi=80)
print("wrote", out / "detection_stages.png")
