"""IQL / RIQL value learning with optional SAM on any of the actor, Q ensemble or V network.

One :func:`train_step` runs, in order: Q-ensemble update, actor update, V
update, Polyak update of the Q targets. Each of the three updates is a plain
Adam step, or a SAM cycle when its component letter (``"A"``, ``"Q"``,
``"V"``) is in ``cfg.sam_targets``. A SAM cycle re-evaluates the loss and
gradient on the same minibatch at the perturbed weights.

RIQL here means IQL with a Huber TD loss, an alpha-quantile over the Q ensemble
in place of the min, and the same quantile in the advantage.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Callable

import numpy as np

from .nn_core import MlpSpec, ParamVector, backward, concat_params, forward, init_params
from .optim import AdamState, SamState

COMPONENTS = ("A", "Q", "V")
LOG_2PI = np.log(2.0 * np.pi)


def parse_components(value) -> frozenset[str]:
    """Accept ``"QV"``, ``"Q,V"``, ``""``/``"none"`` or an iterable of letters."""
    if isinstance(value, str):
        text = value.strip().upper()
        if text in ("", "NONE", "-"):
            return frozenset()
        letters = [c for c in text if c not in ", "]
    else:
        letters = [str(c).upper() for c in value]
    bad = set(letters) - set(COMPONENTS)
    if bad:
        raise ValueError(f"unknown SAM component(s) {sorted(bad)}; use a subset of A, Q, V")
    return frozenset(letters)


def components_label(targets) -> str:
    return "".join(c for c in COMPONENTS if c in targets) or "none"


@dataclass(frozen=True)
class IqlConfig:
    gamma: float = 0.99
    tau_expectile: float = 0.7
    beta_awr: float = 3.0
    target_update_rate: float = 0.005
    batch_size: int = 256
    steps: int = 1000
    sam_targets: frozenset = frozenset()
    rho: float = 0.0
    lr: float = 3e-4
    hidden: tuple = (64, 64)
    n_q: int = 2
    adv_clip: float = 100.0

    algorithm = "iql"

    def __post_init__(self):
        object.__setattr__(self, "sam_targets", parse_components(self.sam_targets))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        self.validate()

    def validate(self) -> None:
        problems = self._problems()
        if problems:
            raise ValueError("; ".join(problems))

    def _problems(self) -> list[str]:
        p = []
        if not 0.0 < self.gamma < 1.0:
            p.append("gamma must lie in (0, 1)")
        if not 0.0 < self.tau_expectile < 1.0:
            p.append("tau_expectile must lie in (0, 1)")
        if not self.beta_awr >= 0.0:
            p.append("beta_awr must be >= 0")
        if not 0.0 < self.target_update_rate <= 1.0:
            p.append("target_update_rate must lie in (0, 1]")
        if self.batch_size < 1:
            p.append("batch_size must be positive")
        if self.steps < 0:
            p.append("steps must be >= 0")
        if self.rho < 0.0:
            p.append("rho must be >= 0")
        if self.lr <= 0.0:
            p.append("lr must be positive")
        if self.ensemble_size < 1:
            p.append("Q ensemble must have at least one member")
        return p

    @property
    def ensemble_size(self) -> int:
        return self.n_q

    def evolve(self, **changes):
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class RiqlConfig(IqlConfig):
    ensemble_k: int = 5
    quantile_alpha: float = 0.25
    huber_delta: float = 1.0

    algorithm = "riql"

    def _problems(self) -> list[str]:
        p = super()._problems()
        if self.ensemble_k < 2:
            p.append("ensemble_k must be >= 2")
        if not 0.0 < self.quantile_alpha < 1.0:
            p.append("quantile_alpha must lie in (0, 1)")
        if self.huber_delta <= 0.0:
            p.append("huber_delta must be positive")
        return p

    @property
    def ensemble_size(self) -> int:
        return self.ensemble_k


# --- scalar losses -----------------------------------------------------------

def expectile_loss(u, tau: float):
    """``|tau - 1(u < 0)| * u**2``, elementwise."""
    u = np.asarray(u, dtype=np.float64)
    return np.where(u >= 0.0, tau, 1.0 - tau) * u * u


def expectile_grad(u, tau: float):
    u = np.asarray(u, dtype=np.float64)
    return 2.0 * np.where(u >= 0.0, tau, 1.0 - tau) * u


def huber_loss(u, delta: float = 1.0):
    u = np.asarray(u, dtype=np.float64)
    a = np.abs(u)
    return np.where(a <= delta, 0.5 * u * u, delta * (a - 0.5 * delta))


def huber_grad(u, delta: float = 1.0):
    return np.clip(np.asarray(u, dtype=np.float64), -delta, delta)


def ensemble_quantile(values, alpha: float, axis: int = 0):
    """Linear-interpolation alpha-quantile across ensemble members."""
    return np.quantile(np.asarray(values, dtype=np.float64), alpha, axis=axis, method="linear")


# --- networks --------------------------------------------------------------

@dataclass
class AgentNets:
    """Actor, V network and a Q ensemble stored as one concatenated vector (plus its target copy)."""

    actor_spec: MlpSpec
    actor: ParamVector
    v_spec: MlpSpec
    v: ParamVector
    q_spec: MlpSpec
    q: ParamVector
    q_target: ParamVector
    n_q: int

    def _members(self, pv: ParamVector) -> list[ParamVector]:
        size = self.q_spec.n_params
        layout = self.q_spec.layout()
        # views into the concatenated vector; updates to pv.values show through
        return [ParamVector(pv.values[i * size:(i + 1) * size], layout) for i in range(self.n_q)]

    @property
    def q_nets(self) -> list[ParamVector]:
        return self._members(self.q)

    @property
    def q_targets(self) -> list[ParamVector]:
        return self._members(self.q_target)

    def copy(self) -> AgentNets:
        return replace(self, actor=self.actor.copy(), v=self.v.copy(), q=self.q.copy(), q_target=self.q_target.copy())

    def component(self, name: str) -> ParamVector:
        return {"A": self.actor, "Q": self.q, "V": self.v}[name]

    def all_params(self) -> ParamVector:
        return concat_params([self.actor, self.q, self.v])

    def __eq__(self, other):
        if not isinstance(other, AgentNets):
            return NotImplemented
        return (self.actor == other.actor and self.v == other.v and self.q == other.q
                and self.q_target == other.q_target)


def make_agent(state_dim: int, action_dim: int, cfg: IqlConfig, seed) -> AgentNets:
    rng = np.random.default_rng(seed)
    actor_spec = MlpSpec(state_dim, cfg.hidden, action_dim, "relu", "gaussian_policy")
    v_spec = MlpSpec(state_dim, cfg.hidden, 1)
    q_spec = MlpSpec(state_dim + action_dim, cfg.hidden, 1)
    actor = init_params(actor_spec, rng)
    v = init_params(v_spec, rng)
    q = concat_params([init_params(q_spec, rng) for _ in range(cfg.ensemble_size)])
    return AgentNets(actor_spec, actor, v_spec, v, q_spec, q, q.copy(), cfg.ensemble_size)


def q_values(nets: AgentNets, members: list[ParamVector], s, a) -> np.ndarray:
    sa = np.concatenate([s, a], axis=1)
    return np.stack([forward(nets.q_spec, p, sa)[:, 0] for p in members])


def _aggregate(q: np.ndarray, cfg: IqlConfig) -> np.ndarray:
    if isinstance(cfg, RiqlConfig):
        return ensemble_quantile(q, cfg.quantile_alpha, axis=0)
    return q.min(axis=0)


def _finite(loss: float, per_sample: np.ndarray, what: str) -> float:
    if not np.isfinite(loss):
        bad = np.flatnonzero(~np.isfinite(per_sample.reshape(per_sample.shape[0], -1).sum(axis=1)
                                          if per_sample.ndim > 1 else per_sample))
        raise FloatingPointError(f"{what} is not finite (batch index {bad[:5].tolist()})")
    return loss


def v_target(nets: AgentNets, batch, cfg: IqlConfig) -> np.ndarray:
    return _aggregate(q_values(nets, nets.q_targets, batch["s"], batch["a"]), cfg)


def v_loss(nets: AgentNets, batch, cfg: IqlConfig) -> tuple[float, np.ndarray]:
    """Expectile regression of V(s) onto the aggregated target-Q; gradient w.r.t. ``nets.v``."""
    target = v_target(nets, batch, cfg)
    s = batch["s"]
    v = forward(nets.v_spec, nets.v, s)[:, 0]
    u = target - v
    per = expectile_loss(u, cfg.tau_expectile)
    loss = _finite(float(per.mean()), per, "V loss")
    upstream = (-expectile_grad(u, cfg.tau_expectile) / len(u))[:, None]
    return loss, backward(nets.v_spec, nets.v, s, upstream)


def v_loss_iql(nets: AgentNets, batch, cfg: IqlConfig | None = None):
    cfg = cfg if cfg is not None else IqlConfig()
    if isinstance(cfg, RiqlConfig):
        cfg = IqlConfig(**{f.name: getattr(cfg, f.name) for f in fields(IqlConfig)})
    return v_loss(nets, batch, cfg)


def v_loss_riql(nets: AgentNets, batch, cfg: RiqlConfig):
    if not isinstance(cfg, RiqlConfig):
        raise TypeError("v_loss_riql needs a RiqlConfig")
    return v_loss(nets, batch, cfg)


def q_loss(nets: AgentNets, batch, cfg: IqlConfig) -> tuple[float, np.ndarray]:
    """TD regression of every ensemble member onto ``r + gamma (1 - d) V(s')``.

    Squared error for IQL, Huber for RIQL; averaged over batch and ensemble.
    The gradient is w.r.t. the concatenated ensemble vector ``nets.q``.
    """
    v_next = forward(nets.v_spec, nets.v, batch["s_next"])[:, 0]
    y = batch["r"] + cfg.gamma * (1.0 - batch["done"]) * v_next
    sa = np.concatenate([batch["s"], batch["a"]], axis=1)
    members = nets.q_nets
    n = len(y)
    scale = 1.0 / (n * len(members))
    total, grads = 0.0, []
    robust = isinstance(cfg, RiqlConfig)
    for p in members:
        u = y - forward(nets.q_spec, p, sa)[:, 0]
        if robust:
            per, dper = huber_loss(u, cfg.huber_delta), huber_grad(u, cfg.huber_delta)
        else:
            per, dper = u * u, 2.0 * u
        total += float(per.sum())
        grads.append(backward(nets.q_spec, p, sa, (-dper * scale)[:, None]))
    loss = total * scale
    if not np.isfinite(loss):
        raise FloatingPointError("Q loss is not finite")
    return loss, np.concatenate(grads)


def gaussian_log_prob(mean, log_std, a):
    z = (a - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def advantage_weights(nets: AgentNets, batch, cfg: IqlConfig) -> np.ndarray:
    q_bar = _aggregate(q_values(nets, nets.q_targets, batch["s"], batch["a"]), cfg)
    v = forward(nets.v_spec, nets.v, batch["s"])[:, 0]
    return np.minimum(np.exp(cfg.beta_awr * (q_bar - v)), cfg.adv_clip)


def actor_loss(nets: AgentNets, batch, cfg: IqlConfig) -> tuple[float, np.ndarray]:
    """Advantage-weighted behavioural cloning with a diagonal Gaussian policy."""
    w = advantage_weights(nets, batch, cfg)
    s, a = batch["s"], batch["a"]
    d = nets.actor_spec.output_dim
    out = forward(nets.actor_spec, nets.actor, s)
    mean, log_std = out[:, :d], out[:, d:]
    logp = gaussian_log_prob(mean, log_std, a)
    n = len(w)
    loss = float(np.mean(-w * logp))
    if not np.isfinite(loss):
        raise FloatingPointError("actor loss is not finite")
    inv_var = np.exp(-2.0 * log_std)
    diff = a - mean
    wn = (w / n)[:, None]
    d_mean = -wn * diff * inv_var
    d_log_std = -wn * (diff * diff * inv_var - 1.0)
    return loss, backward(nets.actor_spec, nets.actor, s, np.concatenate([d_mean, d_log_std], axis=1))


# --- optimisation ----------------------------------------------------------

def make_optimizers(nets: AgentNets, cfg: IqlConfig) -> dict[str, AdamState | SamState]:
    opts = {}
    for name in COMPONENTS:
        base = AdamState(len(nets.component(name)), lr=cfg.lr)
        opts[name] = SamState(base, rho=cfg.rho) if name in cfg.sam_targets else base
    return opts


LOSSES: dict[str, Callable] = {"Q": q_loss, "A": actor_loss, "V": v_loss}


def _update(name, nets, opt, batch, cfg, trace):
    theta = nets.component(name).values
    loss_fn = LOSSES[name]

    def evaluate():
        if trace is not None:
            trace.append(("grad", name, batch.get("idx")))
        return loss_fn(nets, batch, cfg)

    loss, g = evaluate()
    eps_norm = 0.0
    if isinstance(opt, SamState):
        opt.first_step(theta, g)
        eps_norm = opt.eps_norm
        _, g_adv = evaluate()
        opt.second_step(theta, g_adv)
    else:
        opt.step(theta, g)
    if trace is not None:
        trace.append(("update", name, None))
    return loss, g, eps_norm


def polyak_update(nets: AgentNets, rate: float) -> None:
    nets.q_target.values[...] = (1.0 - rate) * nets.q_target.values + rate * nets.q.values


def train_step(nets: AgentNets, optimizers, batch, cfg: IqlConfig, trace: list | None = None) -> dict:
    """One iteration: Q, then actor, then V (each Adam or SAM), then target update.

    If ``trace`` is a list, ``("grad", component, batch_idx)`` is appended for
    every loss/gradient evaluation and ``("update", component, None)`` after
    each parameter update, followed by ``("target", "Q", None)``.
    """
    for opt in optimizers.values():
        if isinstance(opt, SamState) and opt.phase != "ready":
            raise RuntimeError("optimizer left mid-cycle by a previous step")
    lq, _, _ = _update("Q", nets, optimizers["Q"], batch, cfg, trace)
    la, _, _ = _update("A", nets, optimizers["A"], batch, cfg, trace)
    lv, gv, eps_v = _update("V", nets, optimizers["V"], batch, cfg, trace)
    polyak_update(nets, cfg.target_update_rate)
    if trace is not None:
        trace.append(("target", "Q", None))
    return {"L_Q": lq, "L_V": lv, "L_pi": la, "v_grad_norm": float(np.linalg.norm(gv)), "sam_eps_norm": eps_v}


METRIC_FIELDS = ("step", "L_Q", "L_V", "L_pi", "v_grad_norm", "sam_eps_norm")


def train(dataset, cfg: IqlConfig, seed: int = 0, trace: list | None = None):
    """Run ``cfg.steps`` iterations with uniform minibatch sampling (with replacement).

    Returns ``(nets, metrics)``, where ``metrics`` is one dict per step.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    init_seq, sample_seq = np.random.SeedSequence(seed).spawn(2)
    nets = make_agent(dataset.state_dim, dataset.action_dim, cfg, np.random.default_rng(init_seq))
    opts = make_optimizers(nets, cfg)
    rng = np.random.default_rng(sample_seq)
    metrics = []
    for t in range(cfg.steps):
        idx = rng.integers(0, len(dataset), size=cfg.batch_size)
        batch = dataset.batch(idx)
        batch["idx"] = idx
        rec = train_step(nets, opts, batch, cfg, trace)
        metrics.append({"step": t, **rec})
    return nets, metrics


def td_error(nets: AgentNets, dataset, cfg: IqlConfig) -> float:
    """Mean squared TD residual of the Q ensemble over the full dataset."""
    batch = dataset.batch(np.arange(len(dataset)))
    return q_loss(nets, batch, IqlConfig(gamma=cfg.gamma))[0]
