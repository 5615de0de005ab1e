"""
Looking at a V-loss surface
===========================

Evaluate the V expectile loss on a 2-D slice through parameter space spanned
by two filter-normalized directions, then summarise how flat it is.
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from samrl import POINT_MASS, IqlConfig, generate_dataset, train
from samrl.landscape import (evaluate_surface, filter_normalized_directions, flatness_summary, v_loss_evaluator,
                             write_surface_csv)

ds = generate_dataset(POINT_MASS, "replay_mix", 2000, seed=0)
cfg = IqlConfig(steps=300)
nets, _ = train(ds, cfg, seed=0)
batch = ds.batch(np.arange(0, len(ds), 2))

# %%
# Each direction has, block by block, the norm of the matching weights.
d1, d2 = filter_normalized_directions(nets.v, seed=0)
for sl in nets.v.segment_slices():
    print(f"segment norm {np.linalg.norm(nets.v.values[sl]):.3f} -> {np.linalg.norm(d1[sl]):.3f}")

# %%
grid = evaluate_surface(v_loss_evaluator(nets, batch, cfg), nets.v, d1, d2, half_range=1.0, resolution=15)
summary = flatness_summary(grid)
print(summary)

# %%
# The grid goes to CSV for any plotting tool, with the summary in a sidecar file.
out = Path(tempfile.mkdtemp()) / "v_surface.csv"
csv_path, side = write_surface_csv(grid, out)
print(csv_path.read_text().splitlines()[:3])
print(side.read_text())
