"""
Training a fixed-point translator on synthetic lesions
======================================================

A short run of the ``fixedpoint_delta`` generator on procedural lesion images,
followed by the two translations that matter for detection: diseased images
sent to the healthy domain (lesions should vanish) and healthy images sent to
their own domain (nothing should change).

A few hundred iterations already show the effect; the committed benchmark
fixtures use 5000.
"""
import sys
from dataclasses import replace
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from fpgan.benchmark import evaluate_state, lesion_config
from fpgan.evaluation import translate_images
from fpgan.training import train

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 300
out = Path("demo_output")

# %%
# The lesion preset: 64x64 grayscale, base width 8, two residual blocks,
# batch 8 and the brain-lesion loss weights (identity weight 0.1).
run = lesion_config(total_iterations=iterations)
train_images, names = run.dataset.load("train")
test_images, _ = run.dataset.load("test")
cfg = replace(run.train, mode="fixedpoint_delta", log_every=50)

state, telemetry = train(cfg, train_images, out_dir=out / "fpd_run", progress=True)
print(evaluate_state(state, test_images, names, run.evaluation))

# %%
# Translate four diseased and four healthy test images to "healthy".
diseased = [im for im in test_images if im.labels[0]][:4]
healthy = [im for im in test_images if not im.labels[0]][:4]
picked = diseased + healthy
translated = translate_images(state.G, picked, np.zeros(1, dtype=np.float32))

fig, ax = plt.subplots(3, 8, figsize=(14, 5.5))
for j, (im, y) in enumerate(zip(picked, translated)):
    for i, img in enumerate([im.pixels[0], y[0], np.abs(im.pixels[0] - y[0])]):
        ax[i, j].imshow(img, cmap="gray", vmin=0 if i == 2 else -1, vmax=1)
        ax[i, j].axis("off")
for i, label in enumerate(["input", "to healthy", "|difference|"]):
    ax[i, 0].set_title(label, loc="left", fontsize=9)
fig.tight_layout()
fig.savefig(out / "translations.png", dpi=80)

# %%
# The identity term's moving average, as logged in telemetry.csv.
ema = [(it, v) for it, k, v in telemetry if k == "avg_g_identity"]
plt.figure(figsize=(4, 3))
plt.plot(*zip(*ema))
plt.xlabel("iteration")
plt.ylabel("identity loss (EMA)")
plt.tight_layout()
plt.savefig(out / "identity_ema.png", dpi=80)
print("wrote", out / "translations.png", "and", out / "identity_ema.png")
