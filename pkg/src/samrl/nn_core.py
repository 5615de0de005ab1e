"""Dense feed-forward networks on flat parameter vectors, with exact reverse-mode gradients.

Networks are described by an :class:`MlpSpec` and evaluated against a
:class:`ParamVector`, a flat float64 array plus a layout that maps contiguous
segments onto weight matrices and bias vectors. Every optimizer in the package
works on the flat array directly.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0

ACTIVATIONS = ("relu", "tanh")
HEADS = ("linear", "gaussian_policy")


class ContractError(ValueError):
    """Raised when shapes or layouts do not match what a network expects."""


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden: tuple[int, ...] = (64, 64)
    output_dim: int = 1
    activation: str = "relu"
    output_head: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden):
            raise ContractError(f"layer sizes must be positive: {self}")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        if self.output_head not in HEADS:
            raise ContractError(f"unknown output head {self.output_head!r}")

    @property
    def n_outputs(self) -> int:
        """Width of the raw output; the gaussian head emits (mean, log_std)."""
        return 2 * self.output_dim if self.output_head == "gaussian_policy" else self.output_dim

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.n_outputs]

    def layout(self) -> tuple[tuple[int, tuple[int, ...]], ...]:
        segs = []
        sizes = self.sizes
        for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            segs.append((k, (fan_out, fan_in)))
            segs.append((k, (fan_out,)))
        return tuple(segs)

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.layout())


@dataclass
class ParamVector:
    """Flat parameter array with segment layout.

    ``values`` is the only mutable part; optimizers update it in place.
    """

    values: np.ndarray
    layout: tuple[tuple[int, tuple[int, ...]], ...] = field(default=())

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1)
        self.layout = tuple((int(k), tuple(int(s) for s in shape)) for k, shape in self.layout)
        if not self.layout:
            self.layout = ((0, (self.values.size,)),)
        expected = sum(int(np.prod(shape)) for _, shape in self.layout)
        if expected != self.values.size:
            raise ContractError(f"layout covers {expected} values, array has {self.values.size}")

    def __len__(self) -> int:
        return self.values.size

    def copy(self) -> ParamVector:
        return ParamVector(self.values.copy(), self.layout)

    def with_values(self, values: np.ndarray) -> ParamVector:
        return ParamVector(np.array(values, dtype=np.float64), self.layout)

    def segment_slices(self) -> list[slice]:
        out, start = [], 0
        for _, shape in self.layout:
            n = int(np.prod(shape))
            out.append(slice(start, start + n))
            start += n
        return out

    def segments(self) -> list[np.ndarray]:
        """Views of each segment reshaped to its declared shape."""
        return [self.values[sl].reshape(shape) for sl, (_, shape) in zip(self.segment_slices(), self.layout)]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def __eq__(self, other):
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.values, other.values)


# A gradient is a flat float64 array congruent with the ParamVector it differentiates.
Gradient = np.ndarray


def concat_params(parts: Sequence[ParamVector]) -> ParamVector:
    """Join several vectors into one, renumbering layer indices so they stay distinct."""
    layout, offset = [], 0
    for p in parts:
        top = 0
        for k, shape in p.layout:
            layout.append((k + offset, shape))
            top = max(top, k + 1)
        offset += top
    return ParamVector(np.concatenate([p.values for p in parts]), tuple(layout))


def split_params(flat: np.ndarray, templates: Sequence[ParamVector]) -> list[np.ndarray]:
    out, start = [], 0
    for t in templates:
        out.append(flat[start:start + len(t)])
        start += len(t)
    return out


def init_params(spec: MlpSpec, rng: np.random.Generator | int) -> ParamVector:
    """Uniform fan-in initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    rng = np.random.default_rng(rng)
    chunks = []
    for fan_in, fan_out in zip(spec.sizes[:-1], spec.sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_out * fan_in))
        chunks.append(rng.uniform(-bound, bound, size=fan_out))
    return ParamVector(np.concatenate(chunks), spec.layout())


def _check(spec: MlpSpec, params: ParamVector, x: np.ndarray) -> np.ndarray:
    if params.layout != spec.layout():
        raise ContractError("parameter layout does not match network spec")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.input_dim or x.ndim not in (1, 2):
        raise ContractError(f"expected input of width {spec.input_dim}, got shape {x.shape}")
    return x


def _act(name: str, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if name == "relu" else np.tanh(z)


def _act_grad(name: str, z: np.ndarray, h: np.ndarray) -> np.ndarray:
    # relu'(0) := 0
    return (z > 0.0).astype(np.float64) if name == "relu" else 1.0 - h * h


def _forward_cache(spec: MlpSpec, params: ParamVector, x: np.ndarray):
    segs = params.segments()
    n_layers = len(spec.sizes) - 1
    hs, zs = [x], []
    h = x
    for k in range(n_layers):
        w, b = segs[2 * k], segs[2 * k + 1]
        z = h @ w.T + b
        zs.append(z)
        h = z if k == n_layers - 1 else _act(spec.activation, z)
        hs.append(h)
    raw = hs[-1]
    if spec.output_head == "gaussian_policy":
        d = spec.output_dim
        out = raw.copy()
        out[..., d:] = np.clip(raw[..., d:], LOG_STD_MIN, LOG_STD_MAX)
    else:
        out = raw
    return out, hs, zs


def forward(spec: MlpSpec, params: ParamVector, x) -> np.ndarray:
    """Evaluate the network on one input vector or a batch of row vectors."""
    x = _check(spec, params, x)
    return _forward_cache(spec, params, x)[0]


def vjp(spec: MlpSpec, params: ParamVector, x, upstream) -> tuple[Gradient, np.ndarray]:
    """Vector-Jacobian product of the network output.

    Returns the gradient of ``<upstream, forward(params, x)>`` with respect to the
    parameters (summed over the batch) and with respect to ``x``.
    """
    x = _check(spec, params, x)
    out, hs, zs = _forward_cache(spec, params, x)
    delta = np.asarray(upstream, dtype=np.float64)
    if delta.shape != out.shape:
        raise ContractError(f"upstream shape {delta.shape} does not match output shape {out.shape}")
    if spec.output_head == "gaussian_policy":
        d = spec.output_dim
        raw_ls = hs[-1][..., d:]
        delta = delta.copy()
        delta[..., d:] *= (raw_ls > LOG_STD_MIN) & (raw_ls < LOG_STD_MAX)

    batched = x.ndim == 2
    segs = params.segments()
    grads: list[np.ndarray] = [None] * len(segs)
    n_layers = len(zs)
    for k in reversed(range(n_layers)):
        if k < n_layers - 1:
            delta = delta * _act_grad(spec.activation, zs[k], hs[k + 1])
        h_prev = hs[k]
        if batched:
            grads[2 * k] = delta.T @ h_prev
            grads[2 * k + 1] = delta.sum(axis=0)
        else:
            grads[2 * k] = np.outer(delta, h_prev)
            grads[2 * k + 1] = delta.copy()
        delta = delta @ segs[2 * k]
    return np.concatenate([g.reshape(-1) for g in grads]), delta


def backward(spec: MlpSpec, params: ParamVector, x, upstream) -> Gradient:
    return vjp(spec, params, x, upstream)[0]


def finite_diff_check(
    spec: MlpSpec | None,
    params: ParamVector,
    loss_closure: Callable[[ParamVector], tuple[float, Gradient]],
    h: float = 1e-4,
) -> float:
    """Largest relative disagreement between the analytic gradient and central differences.

    ``loss_closure`` returns ``(loss, gradient)``; only the loss is used for the
    numeric side. ``spec`` is accepted for symmetry with the other entry points
    and may be None.
    """
    base, analytic = loss_closure(params)
    if not np.isfinite(base):
        raise FloatingPointError("loss is not finite at the evaluation point")
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.empty_like(params.values)
    probe = params.copy()
    for i in range(len(params)):
        orig = probe.values[i]
        probe.values[i] = orig + h
        up = loss_closure(probe)[0]
        probe.values[i] = orig - h
        down = loss_closure(probe)[0]
        probe.values[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise FloatingPointError(f"loss is not finite when perturbing coordinate {i}")
        numeric[i] = (up - down) / (2.0 * h)
    err = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(err.max(initial=0.0))


_U32 = struct.Struct("<I")


def save_params(params: ParamVector, path) -> Path:
    """Write a ``.pv`` file: segment count, per-segment (layer, ndim, dims...), then float64 LE values."""
    path = Path(path)
    if path.suffix != ".pv":
        path = path.with_suffix(".pv")
    buf = bytearray(_U32.pack(len(params.layout)))
    for k, shape in params.layout:
        buf += struct.pack(f"<II{len(shape)}I", k, len(shape), *shape)
    buf += params.values.astype("<f8").tobytes()
    path.write_bytes(bytes(buf))
    return path


def load_params(path) -> ParamVector:
    data = Path(path).read_bytes()
    (n_seg,), pos = _U32.unpack_from(data, 0), 4
    layout = []
    for _ in range(n_seg):
        k, ndim = struct.unpack_from("<II", data, pos)
        pos += 8
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        layout.append((k, tuple(shape)))
    values = np.frombuffer(data, dtype="<f8", offset=pos).astype(np.float64)
    return ParamVector(values, tuple(layout))
