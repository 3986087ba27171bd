"""
Desk-scale benchmarks
=====================

Regenerates the fixtures under ``tests/fixtures/benchmark`` that the
acceptance tests re-score:

* ``lesion``: the four-mode ablation (stargan, stargan_delta, fixedpoint,
  fixedpoint_delta) on 64x64 procedural lesions, 100 test images.  The
  fixed-point run is trained twice to record a determinism pair.
* ``attr``: stargan vs fixedpoint_delta on three procedural attributes.

On one CPU core a lesion mode takes 15-40 minutes (5000 iterations) and an
attribute mode 1.5-2 hours (20000 iterations).

    python demos/03_desk_benchmark.py lesion
    python demos/03_desk_benchmark.py attr
"""
import argparse
import json
from pathlib import Path

from fpgan.benchmark import run_benchmark

parser = argparse.ArgumentParser()
parser.add_argument("kind", choices=["lesion", "attr"])
parser.add_argument("--iterations", type=int, default=None, help="default: the preset's length")
parser.add_argument("--out", default=None)
parser.add_argument("--modes", nargs="*", default=None)
args = parser.parse_args()

out = Path(args.out or Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "benchmark" / args.kind)
repeat = ("fixedpoint_delta",) if args.kind == "lesion" else ()
results = run_benchmark(args.kind, out, modes=args.modes, total_iterations=args.iterations,
                        repeat=repeat, progress=True)

# %%
# The summary table; the full record (digests, identity-loss EMA) is in results.json.
for mode, r in results["modes"].items():
    shown = {k: v for k, v in r.items() if isinstance(v, float)}
    print(f"{mode:18s}", json.dumps(shown))
