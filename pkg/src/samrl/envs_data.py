"""Toy continuous-control environments, behaviour datasets and their on-disk format.

Two deterministic environments stand in for the MuJoCo tasks:

* ``point_mass_2d``: planar double integrator driven to the origin,
  state ``(x, y, vx, vy)``, action ``(ax, ay)`` in ``[-1, 1]^2``.
* ``pendulum_lite``: damped torque-limited pendulum swing-up,
  state ``(cos th, sin th, th_dot)``, action ``u`` in ``[-2, 2]``.

``step`` accepts either a single state or a batch of row states.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .nn_core import MlpSpec, ParamVector, forward

ODS_MAGIC = b"ODS1"


@dataclass(frozen=True)
class ToyEnv:
    name: str
    state_dim: int
    action_dim: int
    action_low: float
    action_high: float
    horizon: int
    dt: float
    # frozen normalisation references (uniform-random policy / best controller, 100 episodes)
    random_ref: float | None = None
    expert_ref: float | None = None

    def clip_action(self, a):
        return np.clip(np.asarray(a, dtype=np.float64), self.action_low, self.action_high)


POINT_MASS = ToyEnv("point_mass_2d", 4, 2, -1.0, 1.0, horizon=50, dt=0.1,
                    random_ref=-64.81038851200185, expert_ref=-6.723546561769832)
PENDULUM = ToyEnv("pendulum_lite", 3, 1, -2.0, 2.0, horizon=100, dt=0.05,
                  random_ref=-637.4497665403044, expert_ref=-152.24499579751466)
ENVS = {e.name: e for e in (POINT_MASS, PENDULUM)}

PM_POS_LIMIT = 2.0
PM_VEL_LIMIT = 2.0
PEND_G, PEND_M, PEND_L, PEND_DAMPING, PEND_MAX_SPEED = 10.0, 1.0, 1.0, 0.1, 8.0


def make_env(name: str, horizon: int | None = None) -> ToyEnv:
    try:
        env = ENVS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVS)}") from None
    return env if horizon is None else replace(env, horizon=horizon)


def _angle_normalize(th):
    return ((th + np.pi) % (2 * np.pi)) - np.pi


def step(env: ToyEnv, s, a):
    """Deterministic transition. Returns ``(s_next, r, done)``; actions are clipped to bounds."""
    s = np.asarray(s, dtype=np.float64)
    a = env.clip_action(a)
    if env.name == "point_mass_2d":
        p, v = s[..., :2], s[..., 2:]
        r = -(np.sum(p * p, axis=-1) + 0.1 * np.sum(v * v, axis=-1) + 0.01 * np.sum(a * a, axis=-1))
        p2 = np.clip(p + env.dt * v, -PM_POS_LIMIT, PM_POS_LIMIT)
        v2 = np.clip(v + env.dt * a, -PM_VEL_LIMIT, PM_VEL_LIMIT)
        s2 = np.concatenate([p2, v2], axis=-1)
    elif env.name == "pendulum_lite":
        th = np.arctan2(s[..., 1], s[..., 0])
        thdot = s[..., 2]
        u = a[..., 0]
        r = -(_angle_normalize(th) ** 2 + 0.1 * thdot ** 2 + 0.001 * u ** 2)
        acc = 3 * PEND_G / (2 * PEND_L) * np.sin(th) + 3.0 / (PEND_M * PEND_L ** 2) * u - PEND_DAMPING * thdot
        thdot2 = np.clip(thdot + env.dt * acc, -PEND_MAX_SPEED, PEND_MAX_SPEED)
        th2 = th + env.dt * thdot2
        s2 = np.stack([np.cos(th2), np.sin(th2), thdot2], axis=-1)
    else:
        raise ValueError(f"unknown environment {env.name!r}")
    done = np.zeros(np.shape(r), dtype=bool)
    return s2, r, done


def reward_bounds(env: ToyEnv) -> tuple[float, float]:
    """Analytic per-step reward range."""
    if env.name == "point_mass_2d":
        return -(2 * PM_POS_LIMIT ** 2 + 0.1 * 2 * PM_VEL_LIMIT ** 2 + 0.01 * 2 * env.action_high ** 2), 0.0
    return -(np.pi ** 2 + 0.1 * PEND_MAX_SPEED ** 2 + 0.001 * env.action_high ** 2), 0.0


def initial_states(env: ToyEnv, n: int, rng: np.random.Generator) -> np.ndarray:
    if env.name == "point_mass_2d":
        p = rng.uniform(-1.0, 1.0, size=(n, 2))
        return np.concatenate([p, np.zeros((n, 2))], axis=1)
    th = rng.uniform(-np.pi, np.pi, size=n)
    thdot = rng.uniform(-1.0, 1.0, size=n)
    return np.stack([np.cos(th), np.sin(th), thdot], axis=1)


# --- behaviour controllers -------------------------------------------------

Policy = Callable[[np.ndarray, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class Controller:
    """Hand-tuned feedback controller plus optional Gaussian action noise."""

    env: ToyEnv
    quality: str
    noise: float = 0.0

    def __call__(self, s: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        s = np.atleast_2d(s)
        if self.quality == "random":
            return rng.uniform(self.env.action_low, self.env.action_high, size=(s.shape[0], self.env.action_dim))
        if self.env.name == "point_mass_2d":
            kp, kd = {"poor": (0.1, 0.05), "medium": (0.4, 0.3), "expert": (2.0, 2.6)}[self.quality]
            a = -kp * s[:, :2] - kd * s[:, 2:]
        else:
            a = self._pendulum(s)
        if self.noise > 0:
            a = a + self.noise * rng.standard_normal(a.shape)
        return self.env.clip_action(a)

    def _pendulum(self, s):
        th = np.arctan2(s[:, 1], s[:, 0])
        thdot = s[:, 2]
        # energy relative to upright rest; dE/dt = th_dot * u
        energy = thdot ** 2 / 6.0 + PEND_G / (2 * PEND_L) * (s[:, 0] - 1.0)
        gain, kp, kd = {"poor": (0.1, 2.0, 0.2), "medium": (0.5, 6.0, 1.0), "expert": (2.0, 10.0, 2.0)}[self.quality]
        pump = -gain * energy * np.sign(thdot + 1e-9)
        balance = -(kp * th + kd * thdot)
        u = np.where(s[:, 0] > 0.9, balance, pump)
        return u[:, None]


def actor_policy(spec: MlpSpec, params: ParamVector) -> Policy:
    """Deterministic policy taking the Gaussian mean (or the raw output for a linear head)."""
    def act(s, rng=None):
        return forward(spec, params, np.atleast_2d(s))[:, :spec.output_dim]
    return act


def rollout(env: ToyEnv, policy: Policy, s0: np.ndarray, rng: np.random.Generator):
    """Vectorised fixed-horizon rollouts from the rows of ``s0``."""
    s = np.atleast_2d(np.asarray(s0, dtype=np.float64))
    S, A, R, S2, D = [], [], [], [], []
    for _ in range(env.horizon):
        a = env.clip_action(policy(s, rng))
        s2, r, d = step(env, s, a)
        S.append(s); A.append(a); R.append(r); S2.append(s2); D.append(d)
        s = s2
    if not S:
        n = s.shape[0]
        return (np.zeros((n, 0, env.state_dim)), np.zeros((n, 0, env.action_dim)), np.zeros((n, 0)),
                np.zeros((n, 0, env.state_dim)), np.zeros((n, 0), dtype=bool))
    # (episode, time, ...)
    return (np.stack(S, 1), np.stack(A, 1), np.stack(R, 1), np.stack(S2, 1), np.stack(D, 1))


def evaluate_policy(env: ToyEnv, actor, n_episodes: int = 20, seed: int = 0) -> tuple[float, float]:
    """Mean and std of raw episodic returns. ``actor`` is a Policy or an ``(MlpSpec, ParamVector)`` pair."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    if isinstance(actor, tuple):
        actor = actor_policy(*actor)
    rng = np.random.default_rng(seed)
    s0 = initial_states(env, n_episodes, rng)
    returns = rollout(env, actor, s0, rng)[2].sum(axis=1)
    return float(returns.mean()), float(returns.std())


def reference_returns(env: ToyEnv, n_episodes: int = 100, seed: int = 2024) -> tuple[float, float]:
    """Recompute the (random, expert) reference returns frozen into ``ToyEnv``."""
    rand = evaluate_policy(env, Controller(env, "random"), n_episodes, seed)[0]
    expert = evaluate_policy(env, Controller(env, "expert"), n_episodes, seed)[0]
    return rand, expert


def normalized_score(raw: float, env: ToyEnv) -> float:
    if env.random_ref is None or env.expert_ref is None:
        raise ValueError(f"environment {env.name!r} has no normalisation references")
    if not env.expert_ref > env.random_ref:
        raise ValueError("expert reference must exceed random reference")
    return 100.0 * (raw - env.random_ref) / (env.expert_ref - env.random_ref)


# --- datasets ----------------------------------------------------------------

class Transition(NamedTuple):
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool


@dataclass(frozen=True)
class DatasetStats:
    std_s: np.ndarray
    std_a: np.ndarray
    std_r: float = 0.0

    @classmethod
    def from_arrays(cls, s, a, r) -> DatasetStats:
        return cls(np.std(s, axis=0), np.std(a, axis=0), float(np.std(r)))

    def __eq__(self, other):
        return (isinstance(other, DatasetStats) and np.array_equal(self.std_s, other.std_s)
                and np.array_equal(self.std_a, other.std_a) and self.std_r == other.std_r)


@dataclass
class Dataset:
    """Array-of-columns offline dataset. ``stats`` always describe the clean data."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray
    stats: DatasetStats = None
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        self.r = np.asarray(self.r, dtype=np.float64).reshape(-1)
        self.s_next = np.asarray(self.s_next, dtype=np.float64)
        self.done = np.asarray(self.done, dtype=bool).reshape(-1)
        n = len(self.r)
        if not (len(self.s) == len(self.a) == len(self.s_next) == len(self.done) == n):
            raise ValueError("dataset columns have inconsistent lengths")
        if not np.all(np.isfinite(self.r)):
            raise ValueError("rewards must be finite")
        if self.stats is None:
            self.stats = DatasetStats.from_arrays(self.s, self.a, self.r)

    def __len__(self) -> int:
        return len(self.r)

    def __getitem__(self, i) -> Transition:
        return Transition(self.s[i], self.a[i], float(self.r[i]), self.s_next[i], bool(self.done[i]))

    @property
    def state_dim(self) -> int:
        return self.s.shape[1]

    @property
    def action_dim(self) -> int:
        return self.a.shape[1]

    def batch(self, idx) -> dict[str, np.ndarray]:
        return {"s": self.s[idx], "a": self.a[idx], "r": self.r[idx],
                "s_next": self.s_next[idx], "done": self.done[idx].astype(np.float64)}

    def replace_columns(self, **cols) -> Dataset:
        """Copy with some columns swapped; stats and meta carried over unchanged."""
        base = dict(s=self.s.copy(), a=self.a.copy(), r=self.r.copy(),
                    s_next=self.s_next.copy(), done=self.done.copy())
        base.update(cols)
        return Dataset(**base, stats=self.stats, meta=dict(self.meta))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (all(np.array_equal(getattr(self, c), getattr(other, c)) for c in ("s", "a", "r", "s_next", "done"))
                and self.stats == other.stats and self.meta == other.meta)


BEHAVIORS = ("medium_noisy", "replay_mix")
REPLAY_LADDER = ("random", "poor", "medium", "expert")


def _collect(env, policy, n, rng):
    episodes = -(-n // env.horizon)
    s0 = initial_states(env, episodes, rng)
    cols = rollout(env, policy, s0, rng)
    flat = [c.reshape(-1, *c.shape[2:])[:n] for c in cols]
    return flat


def generate_dataset(env: ToyEnv, behavior: str, n_transitions: int, seed: int = 0) -> Dataset:
    """Roll out behaviour controllers until ``n_transitions`` tuples are collected.

    ``medium_noisy`` uses the medium controller with Gaussian action noise.
    ``replay_mix`` concatenates equal shares from random, poor, medium and
    expert controllers, emulating the heterogeneity of a replay buffer.
    """
    if n_transitions < 1:
        raise ValueError("n_transitions must be >= 1")
    if env.horizon < 1:
        raise ValueError("environment horizon must be >= 1 to generate data")
    rng = np.random.default_rng(seed)
    if behavior == "medium_noisy":
        parts = [_collect(env, Controller(env, "medium", noise=0.3 * env.action_high), n_transitions, rng)]
    elif behavior == "replay_mix":
        shares = np.full(len(REPLAY_LADDER), n_transitions // len(REPLAY_LADDER))
        shares[: n_transitions % len(REPLAY_LADDER)] += 1
        parts = [_collect(env, Controller(env, q, noise=0.1 * env.action_high), int(k), rng)
                 for q, k in zip(REPLAY_LADDER, shares) if k > 0]
    else:
        raise ValueError(f"unknown behaviour {behavior!r}; choose from {BEHAVIORS}")
    s, a, r, s2, d = (np.concatenate(c) for c in zip(*parts))
    meta = {"env": env.name, "behavior": behavior, "seed": str(seed), "horizon": str(env.horizon),
            "action_low": repr(env.action_low), "action_high": repr(env.action_high),
            "random_ref": repr(env.random_ref), "expert_ref": repr(env.expert_ref)}
    return Dataset(s, a, r, s2, d, meta=meta)


def save_dataset(ds: Dataset, path) -> Path:
    """Write an ``.ods`` file: magic, key=value header, float64 stats block, float64 records."""
    path = Path(path)
    lines = [f"state_dim={ds.state_dim}", f"action_dim={ds.action_dim}", f"count={len(ds)}"]
    for k in sorted(ds.meta):
        if "\n" in k + ds.meta[k] or "=" in k:
            raise ValueError(f"meta entry {k!r} cannot be stored in the header")
        lines.append(f"meta.{k}={ds.meta[k]}")
    header = "\n".join(lines).encode("utf-8")
    stats = np.concatenate([ds.stats.std_s, ds.stats.std_a, [ds.stats.std_r]])
    records = np.concatenate([ds.s, ds.a, ds.r[:, None], ds.s_next, ds.done[:, None].astype(np.float64)], axis=1)
    with open(path, "wb") as f:
        f.write(ODS_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(stats.astype("<f8").tobytes())
        f.write(records.astype("<f8").tobytes())
    return path


def load_dataset(path) -> Dataset:
    data = Path(path).read_bytes()
    if data[:4] != ODS_MAGIC:
        raise ValueError(f"{path}: not an ODS1 dataset file")
    (hlen,) = struct.unpack_from("<I", data, 4)
    header = data[8:8 + hlen].decode("utf-8")
    fields, meta = {}, {}
    for line in header.split("\n") if header else []:
        key, _, value = line.partition("=")
        if key.startswith("meta."):
            meta[key[5:]] = value
        else:
            fields[key] = int(value)
    ds_, da, n = fields["state_dim"], fields["action_dim"], fields["count"]
    body = np.frombuffer(data, dtype="<f8", offset=8 + hlen).astype(np.float64)
    n_stats = ds_ + da + 1
    stats = DatasetStats(body[:ds_].copy(), body[ds_:ds_ + da].copy(), float(body[ds_ + da]))
    rec = body[n_stats:].reshape(n, 2 * ds_ + da + 2)
    s = rec[:, :ds_]
    a = rec[:, ds_:ds_ + da]
    r = rec[:, ds_ + da]
    s2 = rec[:, ds_ + da + 1:2 * ds_ + da + 1]
    d = rec[:, -1] != 0.0
    return Dataset(s.copy(), a.copy(), r.copy(), s2.copy(), d, stats=stats, meta=meta)


def env_for_dataset(ds: Dataset) -> ToyEnv:
    env = make_env(ds.meta["env"])
    if "horizon" in ds.meta:
        env = replace(env, horizon=int(ds.meta["horizon"]))
    return env
