"""A 1-D loss with a sharp and a flat basin, for watching SAM choose between them.

    L(x) = softmin_T( 8 (x - 1)^2 , 0.05 (x + 3)^2 ),   T = 0.02

The sharp basin sits at x = 1, the flat one at x = -3 and they are separated
by a ridge near x = 0.71. With a normalized ascent step in one dimension, SAM
settles where the probe point ``x + rho * sign(L'(x))`` lands on a stationary
point of L, so with a large enough rho it leaves the sharp basin and comes to
rest at ``x = 1 - rho``, inside the flat basin's region of attraction.
"""
from __future__ import annotations

import numpy as np

from .optim import AdamState, SamState

SHARP_CENTER, SHARP_CURV = 1.0, 8.0
FLAT_CENTER, FLAT_CURV = -3.0, 0.05
TEMPERATURE = 0.02

ADAM_LR = 0.05
STEPS = 500  # both optimizers have settled to ~1e-12 by here
X0 = 0.9
INIT_JITTER = 0.05
# smallest rho of the swept grid for which every seed ends in the flat basin is 0.4; 1.0 leaves margin
FLAT_RHO = 1.0


def _parts(x):
    x = np.asarray(x, dtype=np.float64)
    a = SHARP_CURV * (x - SHARP_CENTER) ** 2
    b = FLAT_CURV * (x - FLAT_CENTER) ** 2
    m = np.minimum(a, b)
    wa, wb = np.exp(-(a - m) / TEMPERATURE), np.exp(-(b - m) / TEMPERATURE)
    return x, a, b, m, wa, wb


def loss(x):
    _, _, _, m, wa, wb = _parts(x)
    return m - TEMPERATURE * np.log(wa + wb)


def grad(x):
    x, _, _, _, wa, wb = _parts(x)
    da = 2 * SHARP_CURV * (x - SHARP_CENTER)
    db = 2 * FLAT_CURV * (x - FLAT_CENTER)
    return (wa * da + wb * db) / (wa + wb)


def optimize(rho: float | None, seed: int = 0, lr: float = ADAM_LR, steps: int = STEPS) -> float:
    """Final x after Adam (``rho=None``) or SAM-wrapped Adam from a jittered start near ``X0``."""
    x = np.array([X0 + np.random.default_rng(seed).uniform(-INIT_JITTER, INIT_JITTER)])
    adam = AdamState(1, lr=lr)
    if rho is None:
        for _ in range(steps):
            adam.step(x, grad(x))
        return float(x[0])
    sam = SamState(adam, rho=rho)
    for _ in range(steps):
        sam.first_step(x, grad(x))
        sam.second_step(x, grad(x))
    return float(x[0])
