"""
Sharp and flat basins in one dimension
======================================

Plain Adam and SAM-wrapped Adam start next to the sharp minimum of a
two-basin loss. Adam stays put; SAM, whose gradient is taken at the
worst point of a small neighbourhood, walks out into the flat basin.
"""

# %%
# The loss is a smooth minimum of a steep and a shallow parabola.
import numpy as np

from samrl import basins

xs = np.linspace(-5, 3, 9)
for x, val in zip(xs, basins.loss(xs)):
    print(f"L({x:+.1f}) = {val:.3f}")

# %%
# Run both optimizers from the same jittered starting points.
for seed in range(3):
    adam = basins.optimize(None, seed)
    sam = basins.optimize(basins.FLAT_RHO, seed)
    print(f"seed {seed}: Adam ends at {adam:+.4f}, SAM(rho={basins.FLAT_RHO}) ends at {sam:+.4f}")

# %%
# SAM does not reach the flat minimum itself: with a normalized ascent step its
# fixed point is ``1 - rho``, where the probe point sits on the sharp minimum.
# What matters is which side of the ridge it ends on.
grid = np.linspace(-6, 4, 20001)
vals = basins.loss(grid)
lo, hi = np.argmin(np.where(grid < 0, vals, np.inf)), np.argmin(np.where(grid > 0, vals, np.inf))
ridge = grid[lo + np.argmax(vals[lo:hi])]
print(f"ridge between the basins at x = {ridge:.3f}")
