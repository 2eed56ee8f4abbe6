"""Dense feedforward networks over flat parameter vectors.

Flattening order is layer-major; inside a layer the weight matrix
(shape ``(n_out, n_in)``) comes first in row-major order, then the bias.
Parameters may carry leading batch dimensions (one row per replica), in which
case the network is evaluated independently for every row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

ACTIVATIONS = ("tanh", "softplus", "linear")


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    activations: tuple[str, ...] = ()

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or any(n <= 0 for n in sizes):
            raise ValueError(f"need at least input and output sizes > 0, got {sizes}")
        acts = tuple(self.activations)
        if not acts:
            acts = ("tanh",) * (len(sizes) - 2) + ("linear",)
        if len(acts) != len(sizes) - 1:
            raise ValueError(f"expected {len(sizes) - 1} activations, got {len(acts)}")
        for a in acts:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        object.__setattr__(self, "activations", acts)

    @classmethod
    def build(cls, n_in: int, hidden, n_out: int, activation: str = "tanh") -> "MlpSpec":
        hidden = tuple(hidden)
        return cls((n_in, *hidden, n_out), (activation,) * len(hidden) + ("linear",))

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def layer_slices(self) -> list[tuple[slice, slice]]:
        """(weight slice, bias slice) per layer in the flat vector."""
        out, start = [], 0
        for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = slice(start, start + a * b)
            bias = slice(w.stop, w.stop + b)
            out.append((w, bias))
            start = bias.stop
        return out

    def to_dict(self) -> dict:
        return {"layer_sizes": list(self.layer_sizes), "activations": list(self.activations)}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(tuple(d["layer_sizes"]), tuple(d.get("activations", ())))


def init_params(spec: MlpSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform in +-1/sqrt(n_in) per layer, weights and biases alike."""
    parts = []
    for a, b in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        lim = 1.0 / np.sqrt(a)
        parts.append(rng.uniform(-lim, lim, size=a * b))
        parts.append(rng.uniform(-lim, lim, size=b))
    return np.concatenate(parts)


def unflatten(spec: MlpSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    params = np.asarray(params)
    if params.shape[-1] != spec.n_params:
        raise ValueError(f"expected {spec.n_params} parameters, got {params.shape[-1]}")
    batch = params.shape[:-1]
    layers = []
    for (ws, bs), a, b in zip(spec.layer_slices(), spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        layers.append((params[..., ws].reshape(batch + (b, a)), params[..., bs]))
    return layers


def flatten(layers) -> np.ndarray:
    parts = []
    for w, b in layers:
        batch = w.shape[:-2]
        parts.append(np.asarray(w).reshape(batch + (-1,)))
        parts.append(np.asarray(b))
    return np.concatenate(parts, axis=-1)


def _activate(x, name):
    if name == "tanh":
        return ad.tanh(x)
    if name == "softplus":
        return ad.softplus(x)
    return x


def forward(spec: MlpSpec, params, x):
    """Evaluate the network.

    ``params`` has shape ``(P,)`` or ``(R, P)``; ``x`` has shape ``(..., n_in)``.
    With batched params, ``x`` must be ``(R, ..., n_in)`` or broadcastable to it.
    Works on plain arrays and on :class:`~lshyper.autodiff.Var`.
    """
    pv = ad.value(params)
    xv = ad.value(x)
    if pv.shape[-1] != spec.n_params:
        raise ValueError(f"expected {spec.n_params} parameters, got {pv.shape[-1]}")
    if xv.shape[-1] != spec.n_in:
        raise ValueError(f"input size {xv.shape[-1]} does not match spec input {spec.n_in}")
    batched = pv.ndim == 2
    h = x
    squeeze = False
    if batched and xv.ndim == 1:
        h = ad.broadcast_to(x, (pv.shape[0], 1, spec.n_in))
        squeeze = True
    elif batched and xv.ndim == 2 and xv.shape[0] == pv.shape[0]:
        h = ad.reshape(x, (xv.shape[0], 1, spec.n_in))
        squeeze = True
    for (ws, bs), a, b, act in zip(spec.layer_slices(), spec.layer_sizes[:-1], spec.layer_sizes[1:], spec.activations):
        if batched:
            w = ad.reshape(ad.take(params, (slice(None), ws)), (pv.shape[0], b, a))
            z = ad.matmul(h, ad.swapaxes(w, -1, -2))
            bias = ad.reshape(ad.take(params, (slice(None), bs)), (pv.shape[0],) + (1,) * (ad.value(z).ndim - 2) + (b,))
        else:
            w = ad.reshape(ad.take(params, ws), (b, a))
            z = ad.matmul(h, ad.swapaxes(w, -1, -2))
            bias = ad.take(params, bs)
        h = _activate(ad.add(z, bias), act)
    if squeeze:
        h = ad.reshape(h, (pv.shape[0], spec.n_out))
    return h


@dataclass(frozen=True)
class ParamPartition:
    """Split of a flat parameter vector into stochastic and deterministic index sets."""

    n_params: int
    stochastic_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self):
        s = np.unique(np.asarray(self.stochastic_idx, dtype=int))
        if s.size and (s[0] < 0 or s[-1] >= self.n_params):
            raise ValueError("stochastic indices out of range")
        object.__setattr__(self, "stochastic_idx", s)

    @property
    def deterministic_idx(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n_params), self.stochastic_idx)

    @property
    def n_stochastic(self) -> int:
        return int(self.stochastic_idx.size)

    @classmethod
    def full(cls, n_params: int) -> "ParamPartition":
        return cls(n_params, np.arange(n_params))

    @classmethod
    def from_sets(cls, stochastic, deterministic) -> "ParamPartition":
        s, d = set(int(i) for i in stochastic), set(int(i) for i in deterministic)
        if s & d:
            raise ValueError("stochastic and deterministic sets overlap")
        n = len(s) + len(d)
        if s | d != set(range(n)):
            raise ValueError("index sets must cover 0..n-1")
        return cls(n, np.array(sorted(s), dtype=int))

    def split(self, w):
        w = np.asarray(w)
        return w[..., self.deterministic_idx], w[..., self.stochastic_idx]

    def to_dict(self) -> dict:
        return {"n_params": self.n_params, "stochastic_idx": self.stochastic_idx.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ParamPartition":
        return cls(int(d["n_params"]), np.asarray(d["stochastic_idx"], dtype=int))


def last_layer_indices(spec: MlpSpec, offset: int = 0) -> np.ndarray:
    ws, bs = spec.layer_slices()[-1]
    return np.arange(ws.start, bs.stop) + offset


def merge(partition: ParamPartition, w_d, w_s):
    """Scatter deterministic and stochastic values into a full parameter vector.

    ``w_s`` may be batched ``(R, n_s)``; ``w_d`` is then broadcast to every row.
    """
    dv, sv = ad.value(w_d), ad.value(w_s)
    nd, ns = partition.n_params - partition.n_stochastic, partition.n_stochastic
    if dv.shape[-1] != nd or sv.shape[-1] != ns:
        raise ValueError(f"expected ({nd}, {ns}) values, got ({dv.shape[-1]}, {sv.shape[-1]})")
    if ns == 0:
        return w_d
    if nd == 0:
        return w_s
    batch = np.broadcast_shapes(dv.shape[:-1], sv.shape[:-1])
    if dv.shape[:-1] != batch:
        w_d = ad.broadcast_to(w_d, batch + (nd,))
    if sv.shape[:-1] != batch:
        w_s = ad.broadcast_to(w_s, batch + (ns,))
    order = np.concatenate([partition.deterministic_idx, partition.stochastic_idx])
    inverse = np.argsort(order)
    return ad.take(ad.concat([w_d, w_s], axis=-1), (Ellipsis, inverse))
