"""Random and adversarial corruption of offline datasets.

Random corruption adds uniform noise scaled by the clean dataset's per-dimension
standard deviation:

    s_hat = s + lam * std(S),  lam ~ U[-eps, eps]^d_s

and analogously ``a_hat = clip(a + lam * std(A))`` and ``r_hat = r + lam * std(R)``.
The reward formula mirrors the observation one; it is a modelling choice, not
something derived from a published formula.

Adversarial observation corruption runs sign-gradient PGD that *decreases* the
mean pretrained Q value, projected onto the box ``s +/- eps * std(S)``.

Mixture corruption applies observation, action and reward corruption in that
order, each to an independently drawn subset of ``round(c * N)`` transitions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .envs_data import Dataset, DatasetStats
from .nn_core import MlpSpec, ParamVector, forward, vjp

ELEMENTS = ("observation", "action", "reward")
MODES = ("random", "adversarial")


@dataclass(frozen=True)
class CorruptionConfig:
    mode: str = "random"
    elements: frozenset = frozenset({"observation"})
    rate: float = 0.3
    eps: float = 1.0
    pgd_steps: int = 10
    pgd_step_size: float = 0.1
    seed: int = 0

    def __post_init__(self):
        elems = self.elements
        if isinstance(elems, str):
            elems = ELEMENTS if elems == "mixture" else [e.strip() for e in elems.split(",") if e.strip()]
        object.__setattr__(self, "elements", frozenset(elems))
        problems = []
        if self.mode not in MODES:
            problems.append(f"mode must be one of {MODES}")
        if not self.elements <= set(ELEMENTS):
            problems.append(f"elements must be a subset of {ELEMENTS}")
        if not 0.0 <= self.rate <= 1.0:
            problems.append("rate must lie in [0, 1]")
        if not self.eps > 0.0:
            problems.append("eps must be positive")
        if self.pgd_steps < 0 or self.pgd_step_size < 0:
            problems.append("PGD steps and step size must be non-negative")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def is_mixture(self) -> bool:
        return self.elements == frozenset(ELEMENTS)

    @property
    def label(self) -> str:
        if self.is_mixture:
            kind = "mixture"
        else:
            kind = "+".join(e for e in ELEMENTS if e in self.elements) or "none"
        return f"{self.mode}-{kind}"


def n_corrupted(rate: float, n: int) -> int:
    """round(c * N) with halves rounded up."""
    return min(n, int(math.floor(rate * n + 0.5)))


def select_indices(n: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Sorted subset of ``round(rate * n)`` distinct indices from a seeded shuffle."""
    k = n_corrupted(rate, n)
    return np.sort(rng.permutation(n)[:k])


def _uniform_noise(rng, shape, eps):
    return rng.uniform(-eps, eps, size=shape)


def _random_obs(ds: Dataset, cfg: CorruptionConfig, stats: DatasetStats, rng) -> tuple[np.ndarray, np.ndarray]:
    idx = select_indices(len(ds), cfg.rate, rng)
    s = ds.s.copy()
    lam = _uniform_noise(rng, (len(idx), ds.state_dim), cfg.eps)
    s[idx] = s[idx] + lam * stats.std_s
    return s, idx


def _random_action(ds: Dataset, cfg, stats, rng, bounds):
    idx = select_indices(len(ds), cfg.rate, rng)
    a = ds.a.copy()
    lam = _uniform_noise(rng, (len(idx), ds.action_dim), cfg.eps)
    a[idx] = np.clip(a[idx] + lam * stats.std_a, bounds[0], bounds[1])
    return a, idx


def _random_reward(ds: Dataset, cfg, stats, rng):
    idx = select_indices(len(ds), cfg.rate, rng)
    r = ds.r.copy()
    r[idx] = r[idx] + _uniform_noise(rng, len(idx), cfg.eps) * stats.std_r
    return r, idx


def _action_bounds(ds: Dataset, bounds):
    if bounds is not None:
        return bounds
    try:
        return float(ds.meta["action_low"]), float(ds.meta["action_high"])
    except KeyError:
        return -np.inf, np.inf


def _rng(cfg):
    return np.random.default_rng(cfg.seed)


def corrupt_random_obs(ds: Dataset, cfg: CorruptionConfig, stats: DatasetStats | None = None):
    """Returns ``(corrupted_dataset, {"observation": indices})``."""
    stats = stats or ds.stats
    s, idx = _random_obs(ds, cfg, stats, _rng(cfg))
    return ds.replace_columns(s=s), {"observation": idx}


def corrupt_random_mixture(ds: Dataset, cfg: CorruptionConfig, stats: DatasetStats | None = None, bounds=None):
    stats = stats or ds.stats
    rng = _rng(cfg)
    s, i_s = _random_obs(ds, cfg, stats, rng)
    a, i_a = _random_action(ds, cfg, stats, rng, _action_bounds(ds, bounds))
    r, i_r = _random_reward(ds, cfg, stats, rng)
    return ds.replace_columns(s=s, a=a, r=r), {"observation": i_s, "action": i_a, "reward": i_r}


def pretrained_q(q_spec: MlpSpec, members: list[ParamVector]):
    """Mean-over-ensemble Q_p(s, a) and its gradient w.r.t. s, for batches of rows."""
    def q_and_grad(s, a):
        sa = np.concatenate([s, a], axis=1)
        upstream = np.full((len(s), 1), 1.0 / len(members))
        val = np.zeros(len(s))
        grad = np.zeros_like(s)
        for p in members:
            val += forward(q_spec, p, sa)[:, 0] / len(members)
            grad += vjp(q_spec, p, sa, upstream)[1][:, :s.shape[1]]
        return val, grad

    return q_and_grad


def pgd_attack(q_and_grad, s, a, radius, steps: int, step_size: float):
    """Minimise Q_p(s_hat, a) over the box ``|s_hat - s| <= radius`` by sign-gradient PGD.

    ``radius`` is ``eps * std(S)`` (broadcast per dimension); the step is
    ``step_size * radius``. The lowest-Q iterate per row is returned, so the
    result never scores higher than the clean state.
    """
    s = np.asarray(s, dtype=np.float64)
    radius = np.broadcast_to(np.asarray(radius, dtype=np.float64), s.shape)
    lo, hi = s - radius, s + radius
    best = s.copy()
    best_q, g = q_and_grad(s, a)
    x = s.copy()
    alive = np.ones(len(s), dtype=bool)
    for _ in range(steps):
        x = np.clip(x - step_size * radius * np.sign(g), lo, hi)
        q, g = q_and_grad(x, a)
        finite = np.isfinite(q) & np.all(np.isfinite(g), axis=1)
        # rows that hit a non-finite value keep their best iterate and stop moving
        alive &= finite
        better = alive & (q < best_q)
        best[better] = x[better]
        best_q = np.where(better, q, best_q)
        g = np.where(alive[:, None], g, 0.0)
        x = np.where(alive[:, None], x, best)
    return best, best_q


def _adversarial_obs(ds, cfg, stats, q_and_grad, rng):
    idx = select_indices(len(ds), cfg.rate, rng)
    s = ds.s.copy()
    if len(idx):
        s[idx], _ = pgd_attack(q_and_grad, ds.s[idx], ds.a[idx], cfg.eps * stats.std_s, cfg.pgd_steps, cfg.pgd_step_size)
    return s, idx


def _q_fn(q_pretrained):
    if callable(q_pretrained):
        return q_pretrained
    return pretrained_q(q_pretrained.q_spec, q_pretrained.q_nets)


def corrupt_adversarial_obs(ds: Dataset, cfg: CorruptionConfig, stats: DatasetStats | None, q_pretrained):
    """``q_pretrained`` is an ``AgentNets`` or a callable ``(s, a) -> (q, dq/ds)``."""
    stats = stats or ds.stats
    s, idx = _adversarial_obs(ds, cfg, stats, _q_fn(q_pretrained), _rng(cfg))
    return ds.replace_columns(s=s), {"observation": idx}


def corrupt_adversarial_mixture(ds: Dataset, cfg: CorruptionConfig, stats: DatasetStats | None, q_pretrained, bounds=None):
    """PGD on observations; actions and rewards use the random-mode formulas."""
    stats = stats or ds.stats
    rng = _rng(cfg)
    s, i_s = _adversarial_obs(ds, cfg, stats, _q_fn(q_pretrained), rng)
    a, i_a = _random_action(ds, cfg, stats, rng, _action_bounds(ds, bounds))
    r, i_r = _random_reward(ds, cfg, stats, rng)
    return ds.replace_columns(s=s, a=a, r=r), {"observation": i_s, "action": i_a, "reward": i_r}


def corrupt(ds: Dataset, cfg: CorruptionConfig, q_pretrained=None, stats: DatasetStats | None = None):
    """Dispatch on mode and element set. Returns ``(dataset, masks)``."""
    stats = stats or ds.stats
    if cfg.rate == 0.0 or not cfg.elements:
        return ds.replace_columns(), {e: np.zeros(0, dtype=np.int64) for e in sorted(cfg.elements)}
    if cfg.mode == "adversarial" and "observation" in cfg.elements and q_pretrained is None:
        raise ValueError("adversarial observation corruption needs a pretrained Q ensemble")
    rng = _rng(cfg)
    cols, masks = {}, {}
    for element in ELEMENTS:
        if element not in cfg.elements:
            continue
        if element == "observation":
            if cfg.mode == "adversarial":
                cols["s"], masks[element] = _adversarial_obs(ds, cfg, stats, _q_fn(q_pretrained), rng)
            else:
                cols["s"], masks[element] = _random_obs(ds, cfg, stats, rng)
        elif element == "action":
            cols["a"], masks[element] = _random_action(ds, cfg, stats, rng, _action_bounds(ds, None))
        else:
            cols["r"], masks[element] = _random_reward(ds, cfg, stats, rng)
    return ds.replace_columns(**cols), masks


def save_masks(masks: dict[str, np.ndarray], directory, prefix: str = "mask", header: str = "") -> list[Path]:
    """One text file per element, one transition index per line (``#`` lines are comments)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for element in sorted(masks):
        path = directory / f"{prefix}_{element}.idx"
        path.write_text(header + "".join(f"{int(i)}\n" for i in masks[element]))
        paths.append(path)
    return paths


def load_masks(directory, prefix: str = "mask") -> dict[str, np.ndarray]:
    out = {}
    for path in sorted(Path(directory).glob(f"{prefix}_*.idx")):
        element = path.stem[len(prefix) + 1:]
        lines = [ln.strip() for ln in path.read_text().splitlines()]
        out[element] = np.array([int(ln) for ln in lines if ln and not ln.startswith("#")], dtype=np.int64)
    return out
