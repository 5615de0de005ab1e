"""Adam, the SAM two-step wrapper around it, and a sharpness probe.

SAM usage mirrors the usual ascend/descend protocol::

    loss, g = loss_and_grad(params)
    sam.first_step(params, g)        # params now at theta + eps
    loss_adv, g_adv = loss_and_grad(params)
    sam.second_step(params, g_adv)   # back to theta, then one Adam step with g_adv
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .nn_core import ParamVector

DEGENERATE_GRAD_NORM = 1e-12


class SamProtocolError(RuntimeError):
    """first_step / second_step called out of order."""


class ProbeError(FloatingPointError):
    def __init__(self, index: int, message: str):
        super().__init__(f"direction {index}: {message}")
        self.index = index


def _values(params) -> np.ndarray:
    return params.values if isinstance(params, ParamVector) else params


@dataclass
class AdamState:
    size: int
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_num: float = 1e-8
    t: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)

    def step(self, params, grad) -> None:
        """Bias-corrected Adam update applied to ``params`` in place."""
        theta = _values(params)
        g = np.asarray(grad, dtype=np.float64)
        if g.shape != theta.shape or g.shape != self.m.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameters {theta.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient passed to Adam; parameters left untouched")
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * g
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * (g * g)
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        theta -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps_num)


@dataclass
class SamState:
    base: AdamState
    rho: float = 0.05
    phase: str = "ready"
    stored_eps: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    _origin: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be non-negative")

    def first_step(self, params, grad) -> np.ndarray:
        """Ascend to ``theta + rho * g / ||g||`` (global l2 norm) and remember the offset."""
        if self.phase != "ready":
            raise SamProtocolError("first_step called twice without second_step")
        theta = _values(params)
        g = np.asarray(grad, dtype=np.float64)
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameters {theta.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient in SAM ascent")
        norm = float(np.linalg.norm(g))
        self._origin = theta.copy()
        if self.rho == 0.0 or norm < DEGENERATE_GRAD_NORM:
            eps = np.zeros_like(theta)
        else:
            eps = (self.rho / norm) * g
            theta += eps
        self.stored_eps = eps
        self.phase = "ascended"
        return eps

    def second_step(self, params, grad_at_perturbed) -> None:
        """Return to the pre-ascent parameters, then take the base step with the perturbed gradient."""
        if self.phase != "ascended":
            raise SamProtocolError("second_step called without a preceding first_step")
        theta = _values(params)
        # restore from the saved copy rather than subtracting eps: exact, not just to rounding
        theta[...] = self._origin
        self.base.step(theta, grad_at_perturbed)
        self.stored_eps = np.empty(0)
        self._origin = None
        self.phase = "ready"

    @property
    def eps_norm(self) -> float:
        return float(np.linalg.norm(self.stored_eps)) if self.stored_eps.size else 0.0


def adam_step(state: AdamState, params, grad) -> None:
    state.step(params, grad)


def sam_first_step(state: SamState, params, grad) -> np.ndarray:
    return state.first_step(params, grad)


def sam_second_step(state: SamState, params, grad_at_perturbed) -> None:
    state.second_step(params, grad_at_perturbed)


def sharpness_probe(
    loss_and_grad: Callable[[ParamVector], tuple[float, np.ndarray]],
    params: ParamVector,
    rho: float,
    n_samples: int = 64,
    seed: int = 0,
) -> float:
    """Monte-Carlo lower bound on ``max_{||e|| <= rho} L(theta + e) - L(theta)``.

    Candidates are the normalized-gradient ascent point plus ``n_samples``
    uniform directions on the rho-sphere. Directions are drawn one at a time, so
    a larger ``n_samples`` with the same seed evaluates a superset of points.
    Direction index 0 is the gradient direction; random ones are 1..n_samples.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    theta = _values(params)
    probe = ParamVector(theta.copy(), params.layout) if isinstance(params, ParamVector) else theta.copy()
    base, g = loss_and_grad(probe)
    if not np.isfinite(base):
        raise ProbeError(-1, "loss is not finite at the centre")

    def at(offset: np.ndarray, index: int) -> float:
        _values(probe)[...] = theta + offset
        val = loss_and_grad(probe)[0]
        if not np.isfinite(val):
            raise ProbeError(index, "non-finite loss")
        return float(val)

    g = np.asarray(g, dtype=np.float64)
    norm = float(np.linalg.norm(g))
    best = 0.0 if norm < DEGENERATE_GRAD_NORM else at(rho * g / norm, 0) - base
    rng = np.random.default_rng(seed)
    for i in range(1, n_samples + 1):
        d = rng.standard_normal(theta.size)
        d *= rho / np.linalg.norm(d)
        best = max(best, at(d, i) - base)
    return float(best)
