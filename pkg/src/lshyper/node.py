"""Hidden-state ODE data model integrated with Heun's predictor/corrector.

``dh/dt = NN_R(h, x(t))`` and ``Y = NN_Z(h, x(t))`` (or ``Y = h``).  The
right-hand side is evaluated at the input of the *next* grid point in both
stages of a step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .nets import MlpSpec, forward


class IntegrationError(FloatingPointError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"non-finite hidden state at step {step}")


def heun_step(rhs, x_next, h, dt: float, step: int = 0):
    """One predictor/corrector step; ``rhs(x, h)`` returns dh/dt."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    r1 = rhs(x_next, h)
    hp = ad.add(h, ad.scale(r1, dt))
    r2 = rhs(x_next, hp)
    out = ad.add(h, ad.scale(ad.add(r1, r2), 0.5 * dt))
    if not np.all(np.isfinite(ad.value(out))):
        raise IntegrationError(step)
    return out


@dataclass(frozen=True)
class DataModel:
    """NODE data model.

    ``rhs_spec`` of ``None`` freezes the hidden state (dh/dt = 0) and
    ``obs_spec`` of ``None`` means the identity observation.  When
    ``initial_from_data`` is set the hidden state starts at each trajectory's
    first observed value (identity observation only); otherwise at ``h0``.
    Parameters are laid out as ``[rhs params, obs params]``.
    """

    rhs_spec: MlpSpec | None
    hidden_dim: int
    input_dim: int = 0
    obs_spec: MlpSpec | None = None
    h0: tuple[float, ...] | None = None
    initial_from_data: bool = False

    def __post_init__(self):
        if self.rhs_spec is None and self.obs_spec is None:
            raise ValueError("model needs a right-hand side or an observation network")
        if self.rhs_spec is not None:
            if self.rhs_spec.n_in != self.hidden_dim + self.input_dim:
                raise ValueError("rhs input size must equal hidden_dim + input_dim")
            if self.rhs_spec.n_out != self.hidden_dim:
                raise ValueError("rhs output size must equal hidden_dim")
        if self.obs_spec is not None and self.obs_spec.n_in != self.hidden_dim + self.input_dim:
            raise ValueError("observation input size must equal hidden_dim + input_dim")
        if self.initial_from_data and self.obs_spec is not None:
            raise ValueError("initial_from_data requires the identity observation")
        if self.h0 is not None and len(self.h0) != self.hidden_dim:
            raise ValueError("h0 length must equal hidden_dim")

    @property
    def n_rhs_params(self) -> int:
        return self.rhs_spec.n_params if self.rhs_spec else 0

    @property
    def n_params(self) -> int:
        return self.n_rhs_params + (self.obs_spec.n_params if self.obs_spec else 0)

    @property
    def obs_dim(self) -> int:
        return self.obs_spec.n_out if self.obs_spec else self.hidden_dim

    def split_params(self, params):
        n = self.n_rhs_params
        pv = ad.value(params)
        rhs = ad.take(params, (Ellipsis, slice(0, n))) if self.rhs_spec else None
        obs = ad.take(params, (Ellipsis, slice(n, pv.shape[-1]))) if self.obs_spec else None
        return rhs, obs

    def initial_state(self, data_values=None, n_traj: int = 1) -> np.ndarray:
        if self.initial_from_data:
            if data_values is None:
                raise ValueError("initial_from_data needs data")
            return np.asarray(data_values)[:, 0, :]
        h0 = np.zeros(self.hidden_dim) if self.h0 is None else np.asarray(self.h0, dtype=float)
        return np.broadcast_to(h0, (n_traj, self.hidden_dim)).copy()

    def to_dict(self) -> dict:
        return {
            "rhs_spec": self.rhs_spec.to_dict() if self.rhs_spec else None,
            "hidden_dim": self.hidden_dim,
            "input_dim": self.input_dim,
            "obs_spec": self.obs_spec.to_dict() if self.obs_spec else None,
            "h0": list(self.h0) if self.h0 is not None else None,
            "initial_from_data": self.initial_from_data,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DataModel":
        return cls(
            MlpSpec.from_dict(d["rhs_spec"]) if d.get("rhs_spec") else None,
            int(d["hidden_dim"]),
            int(d.get("input_dim", 0)),
            MlpSpec.from_dict(d["obs_spec"]) if d.get("obs_spec") else None,
            tuple(d["h0"]) if d.get("h0") is not None else None,
            bool(d.get("initial_from_data", False)),
        )


def _rhs_fn(model: DataModel, rhs_params):
    spec = model.rhs_spec

    def rhs(x, h):
        z = h if x is None else ad.concat([h, x], axis=-1)
        return forward(spec, rhs_params, z)

    return rhs


def integrate(model: DataModel, params, times, h0, inputs=None):
    """Hidden trajectory at every grid point.

    ``h0`` has shape ``(N, hidden)``; ``params`` is ``(P,)`` or ``(R, P)``.
    Batched params give states of shape ``(R, N, hidden)``.  ``inputs`` has
    shape ``(N, T, input_dim)`` when the model takes inputs.  Returns a list of
    length ``T`` of states (arrays or Vars).
    """
    times = np.asarray(times, dtype=float)
    rhs_params, _ = model.split_params(params)
    rhs = _rhs_fn(model, rhs_params)
    pv = ad.value(params)
    h = np.asarray(h0, dtype=float)
    if pv.ndim == 2:
        h = np.broadcast_to(h, (pv.shape[0],) + h.shape).copy()
    states = [h]
    if model.rhs_spec is None:
        return states * times.size
    for n in range(times.size - 1):
        x_next = None
        if model.input_dim:
            x_next = np.asarray(inputs)[:, n + 1, :]
            if pv.ndim == 2:
                x_next = np.broadcast_to(x_next, (pv.shape[0],) + x_next.shape)
        h = heun_step(rhs, x_next, h, times[n + 1] - times[n], step=n + 1)
        states.append(h)
    return states


def observe(model: DataModel, params, h, x=None):
    hv = ad.value(h)
    if hv.shape[-1] != model.hidden_dim:
        raise ValueError("state size mismatch")
    if model.obs_spec is None:
        return h
    _, obs_params = model.split_params(params)
    z = h if x is None else ad.concat([h, x], axis=-1)
    return forward(model.obs_spec, obs_params, z)


def predict(model: DataModel, params, times, h0, inputs=None):
    """Observable trajectory, shape ``(..., N, T, obs_dim)``."""
    states = integrate(model, params, times, h0, inputs)
    outs = []
    for k, h in enumerate(states):
        x = None
        if model.input_dim:
            x = np.asarray(inputs)[:, k, :]
            if ad.value(h).ndim == 3:
                x = np.broadcast_to(x, ad.value(h).shape[:1] + x.shape)
        y = observe(model, params, h, x)
        yv = ad.value(y)
        outs.append(ad.reshape(y, yv.shape[:-1] + (1, yv.shape[-1])))
    return ad.concat(outs, axis=-2)
