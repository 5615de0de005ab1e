"""2-D loss and reward surfaces around trained parameters, plus flatness summaries.

Directions are Gaussian, rescaled segment by segment so each weight matrix or
bias block of the direction has the norm of the matching parameter block
("filter" normalisation at layer granularity). The second direction is made
orthogonal to the first within every segment, which keeps per-segment norms
exact and makes the full vectors orthogonal as well.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .nn_core import ParamVector, split_params


@dataclass
class SurfaceGrid:
    center: ParamVector
    dir1: np.ndarray
    dir2: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray
    values: np.ndarray  # values[i, j] at center + alphas[i] * dir1 + betas[j] * dir2; NaN = missing

    @property
    def center_index(self) -> tuple[int, int]:
        return len(self.alphas) // 2, len(self.betas) // 2

    @property
    def center_value(self) -> float:
        return float(self.values[self.center_index])


def _rescale(d: np.ndarray, target_norm: float) -> np.ndarray:
    n = np.linalg.norm(d)
    if target_norm == 0.0 or n == 0.0:
        return np.zeros_like(d)
    return d * (target_norm / n)


def filter_normalized_directions(params: ParamVector, seed=0) -> tuple[np.ndarray, np.ndarray]:
    if len(params) == 0:
        raise ValueError("cannot build directions for an empty parameter vector")
    rng = np.random.default_rng(seed)
    raw1 = rng.standard_normal(len(params))
    raw2 = rng.standard_normal(len(params))
    dir1 = np.zeros(len(params))
    dir2 = np.zeros(len(params))
    for sl in params.segment_slices():
        target = float(np.linalg.norm(params.values[sl]))
        d1 = _rescale(raw1[sl], target)
        d2 = raw2[sl].copy()
        n1 = float(d1 @ d1)
        if n1 > 0.0:
            d2 -= (d2 @ d1) / n1 * d1
            # one more pass keeps the residual inner product at rounding level
            d2 -= (d2 @ d1) / n1 * d1
        dir1[sl] = d1
        dir2[sl] = _rescale(d2, target)
    return dir1, dir2


def grid_axis(half_range: float, resolution: int) -> np.ndarray:
    """Symmetric, uniformly spaced axis whose middle entry is exactly 0."""
    if resolution < 1 or resolution % 2 == 0:
        raise ValueError("resolution must be a positive odd integer")
    k = resolution // 2
    if k == 0:
        return np.zeros(1)
    return half_range * (np.arange(resolution) - k) / k


def evaluate_surface(
    evaluator: Callable[[ParamVector], float],
    params: ParamVector,
    dir1: np.ndarray,
    dir2: np.ndarray,
    half_range: float = 1.0,
    resolution: int = 31,
) -> SurfaceGrid:
    """Evaluate on the grid; evaluator exceptions or non-finite results become NaN cells."""
    alphas = grid_axis(half_range, resolution)
    betas = grid_axis(half_range, resolution)
    values = np.full((resolution, resolution), np.nan)
    theta = params.values
    for i, a in enumerate(alphas):
        for j, b in enumerate(betas):
            point = params.with_values(theta if a == 0.0 and b == 0.0 else theta + a * dir1 + b * dir2)
            try:
                v = float(evaluator(point))
            except (ArithmeticError, ValueError):
                continue
            if math.isfinite(v):
                values[i, j] = v
    return SurfaceGrid(params.copy(), np.asarray(dir1), np.asarray(dir2), alphas, betas, values)


@dataclass(frozen=True)
class FlatnessSummary:
    range: float
    mean_abs_gradient: float
    center_gap: float
    n_cells: int
    n_missing: int


def flatness_summary(grid: SurfaceGrid) -> FlatnessSummary:
    """Range, mean |finite difference| per unit coordinate over adjacent cells, and centre minus min."""
    v = grid.values
    present = np.isfinite(v)
    if not present.any():
        nan = float("nan")
        return FlatnessSummary(nan, nan, nan, 0, v.size)
    vmin, vmax = float(np.nanmin(v)), float(np.nanmax(v))
    slopes = []
    if len(grid.alphas) > 1:
        slopes.append((np.abs(np.diff(v, axis=0)) / np.diff(grid.alphas)[:, None]).ravel())
    if len(grid.betas) > 1:
        slopes.append((np.abs(np.diff(v, axis=1)) / np.diff(grid.betas)[None, :]).ravel())
    slopes = np.concatenate(slopes) if slopes else np.zeros(0)
    slopes = slopes[np.isfinite(slopes)]
    mag = float(slopes.mean()) if slopes.size else 0.0
    center = v[grid.center_index]
    gap = float(center - vmin) if np.isfinite(center) else float("nan")
    return FlatnessSummary(vmax - vmin, mag, gap, int(present.sum()), int((~present).sum()))


# --- evaluators ---------------------------------------------------------------

def v_loss_evaluator(nets, batch, cfg):
    """Loss surface: V expectile loss on a frozen batch as a function of the V parameters."""
    from .rl_iql import v_loss

    def evaluate(pv: ParamVector) -> float:
        return v_loss(replace(nets, v=pv), batch, cfg)[0]

    return evaluate


def reward_evaluator(nets, env, n_episodes: int = 5, seed: int = 0):
    """Reward surface over the concatenation (actor, Q ensemble, V) of all parameters.

    Returns the evaluator and the centre vector. Only the actor influences the
    return, but the perturbation is drawn over every network jointly.
    """
    from .envs_data import evaluate_policy

    center = nets.all_params()
    templates = [nets.actor, nets.q, nets.v]

    def evaluate(pv: ParamVector) -> float:
        actor_vals = split_params(pv.values, templates)[0]
        actor = ParamVector(actor_vals, nets.actor.layout)
        return evaluate_policy(env, (nets.actor_spec, actor), n_episodes, seed)[0]

    return evaluate, center


def write_surface_csv(grid: SurfaceGrid, path) -> tuple[Path, Path]:
    """``alpha,beta,value`` rows (empty value = missing) and a ``.summary.txt`` sidecar."""
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["alpha", "beta", "value"])
        for i, a in enumerate(grid.alphas):
            for j, b in enumerate(grid.betas):
                v = grid.values[i, j]
                w.writerow([repr(float(a)), repr(float(b)), repr(float(v)) if np.isfinite(v) else ""])
    summary = flatness_summary(grid)
    side = path.with_suffix(".summary.txt")
    side.write_text("".join(f"{k}={getattr(summary, k)!r}\n" for k in summary.__dataclass_fields__))
    return path, side


def read_surface_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    alphas = np.array(sorted({float(r["alpha"]) for r in rows}))
    betas = np.array(sorted({float(r["beta"]) for r in rows}))
    values = np.full((len(alphas), len(betas)), np.nan)
    ai = {a: i for i, a in enumerate(alphas)}
    bi = {b: j for j, b in enumerate(betas)}
    for r in rows:
        if r["value"] != "":
            values[ai[float(r["alpha"])], bi[float(r["beta"])]] = float(r["value"])
    return alphas, betas, values
