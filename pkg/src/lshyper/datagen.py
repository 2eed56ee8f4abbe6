"""Synthetic trajectory generators.

Two sources: closed-form relaxation trajectories with per-trajectory random
(rate, level, initial value), and Gillespie direct-method paths of the
Schlogl network.  Each trajectory draws from its own RNG stream keyed by
``(seed, trajectory index)`` so output does not depend on generation order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass
class TrajectoryEnsemble:
    """Paths on a shared time grid.

    ``values`` has shape ``(n_traj, n_times, n_obs)``.
    """

    times: np.ndarray
    values: np.ndarray
    metadata: dict = field(default_factory=dict)
    inputs: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3 or v.shape[1] != self.times.size:
            raise ValueError(f"values shape {v.shape} incompatible with {self.times.size} times")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("time grid must be strictly increasing")
        self.values = v
        if self.inputs is not None:
            x = np.asarray(self.inputs, dtype=float)
            if x.ndim == 2:
                x = x[:, :, None]
            if x.shape[:2] != v.shape[:2]:
                raise ValueError("inputs must have shape (n_traj, n_times, n_in)")
            self.inputs = x

    @property
    def n_traj(self) -> int:
        return self.values.shape[0]

    @property
    def n_times(self) -> int:
        return self.values.shape[1]

    def scaled(self, scale: float, shift: float = 0.0) -> "TrajectoryEnsemble":
        """Affine-rescaled copy, ``(v - shift) / scale``, with the map recorded."""
        meta = dict(self.metadata, scale={"scale": float(scale), "shift": float(shift)})
        return TrajectoryEnsemble(self.times.copy(), (self.values - shift) / scale, meta, self.inputs)


def _stream(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _check_grid(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0):
        raise ValueError("time grid must be a strictly increasing 1-d array")
    return t


# ------------------------------------------------------------ relaxation data


@dataclass
class OuDataConfig:
    """Distribution parameters are (mean, std)."""

    rate: tuple[float, float] = (8.0, 0.8)
    level: tuple[float, float] = (1.0, 0.1)
    y0: tuple[float, float] = (2.0, 0.02)
    noise: float = 0.0
    t_end: float = 1.0
    n_steps: int = 100
    n_traj: int = 1024

    def __post_init__(self):
        for name in ("rate", "level", "y0"):
            mu, sd = getattr(self, name)
            if sd < 0:
                raise ValueError(f"{name} std must be >= 0")
            setattr(self, name, (float(mu), float(sd)))
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.n_traj < 1:
            raise ValueError("n_traj must be >= 1")
        if self.n_steps < 1 or self.t_end <= 0:
            raise ValueError("need n_steps >= 1 and t_end > 0")

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.n_steps + 1)

    def to_dict(self) -> dict:
        return asdict(self)


def ou_solution(rate, level, y0, t):
    """Noise-free relaxation ``(y0 - level) exp(-rate t) + level``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    return (np.asarray(y0) - level) * np.exp(-np.asarray(rate) * t) + level


def generate_ou_dataset(cfg: OuDataConfig, seed: int) -> TrajectoryEnsemble:
    t = cfg.times
    values = np.empty((cfg.n_traj, t.size))
    params = np.empty((cfg.n_traj, 3))
    for j in range(cfg.n_traj):
        rng = _stream(seed, j)
        rate = rng.normal(*cfg.rate)
        level = rng.normal(*cfg.level)
        y0 = rng.normal(*cfg.y0)
        params[j] = rate, level, y0
        if cfg.noise == 0.0:
            values[j] = ou_solution(rate, level, y0, t)
        else:
            values[j] = _ou_exact_path(rate, level, y0, cfg.noise, t, rng)
    meta = {"generator": "ou", "config": cfg.to_dict(), "seed": int(seed)}
    meta["true_params"] = params.tolist()
    return TrajectoryEnsemble(t, values, meta)


def _ou_exact_path(rate, level, y0, noise, t, rng):
    # exact transition of dy = -rate (y - level) dt + noise dB
    out = np.empty(t.size)
    out[0] = y0
    for k in range(1, t.size):
        dt = t[k] - t[k - 1]
        decay = math.exp(-rate * dt)
        sd = noise * math.sqrt((1 - decay**2) / (2 * rate)) if rate > 0 else noise * math.sqrt(dt)
        out[k] = level + (out[k - 1] - level) * decay + sd * rng.standard_normal()
    return out


# ------------------------------------------------------------ Schlogl network


@dataclass
class SchloglConfig:
    k1: float = 3e-7
    k2: float = 1e-4
    k3: float = 1e-3
    k4: float = 3.5
    A: int = 100_000
    B: int = 200_000
    X0: int = 250
    t_end: float = 5.0
    n_steps: int = 99
    n_traj: int = 200

    def __post_init__(self):
        for k in ("k1", "k2", "k3", "k4"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be >= 0")
        for k in ("A", "B", "X0"):
            v = getattr(self, k)
            if v < 0 or int(v) != v:
                raise ValueError(f"{k} must be a non-negative integer")
            setattr(self, k, int(v))
        if self.n_traj < 1:
            raise ValueError("n_traj must be >= 1")
        if self.n_steps < 1 or self.t_end <= 0:
            raise ValueError("need n_steps >= 1 and t_end > 0")

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.n_steps + 1)

    def to_dict(self) -> dict:
        return asdict(self)


# state change of X for (R1 forward, R1 backward, R2 forward, R2 backward)
SCHLOGL_STOICHIOMETRY = (1, -1, 1, -1)


def schlogl_propensities(X: int, cfg: SchloglConfig) -> tuple[float, float, float, float]:
    if X < 0:
        raise ValueError("X must be >= 0")
    X = int(X)
    # exact integer pair and triple counts keep the rates free of rounding drift
    return (
        cfg.k1 * cfg.A * (X * (X - 1) // 2),
        cfg.k2 * (X * (X - 1) * (X - 2) // 6),
        cfg.k3 * cfg.B,
        cfg.k4 * X,
    )


def gillespie_path(cfg: SchloglConfig, times: np.ndarray, rng: np.random.Generator,
                   record_events: bool = False):
    """Direct-method path sampled right-continuously onto ``times``.

    Returns the grid values, plus ``(event_times, states_before)`` when
    ``record_events`` is set.
    """
    x = cfg.X0
    t = times[0]
    out = np.empty(times.size)
    k = 0
    ev_t, ev_x = [], []
    t_end = times[-1]
    while True:
        a = schlogl_propensities(x, cfg)
        a0 = a[0] + a[1] + a[2] + a[3]
        if a0 <= 0.0:
            t_next = math.inf
        else:
            t_next = t + rng.exponential(1.0 / a0)
        # value on [t, t_next) is x
        while k < times.size and times[k] < t_next:
            out[k] = x
            k += 1
        if t_next > t_end:
            break
        u = rng.random() * a0
        acc = 0.0
        for i in range(4):
            acc += a[i]
            if u < acc:
                break
        if record_events:
            ev_t.append(t_next)
            ev_x.append(x)
        x += SCHLOGL_STOICHIOMETRY[i]
        t = t_next
    if record_events:
        return out, (np.asarray(ev_t), np.asarray(ev_x))
    return out


def generate_schlogl_dataset(cfg: SchloglConfig, seed: int) -> TrajectoryEnsemble:
    t = cfg.times
    values = np.empty((cfg.n_traj, t.size))
    for j in range(cfg.n_traj):
        values[j] = gillespie_path(cfg, t, _stream(seed, j))
    meta = {"generator": "schlogl", "config": cfg.to_dict(), "seed": int(seed)}
    return TrajectoryEnsemble(t, values, meta)


# ------------------------------------------------------------ static regression


@dataclass
class RegressionConfig:
    """Replicated noisy observations of ``sin(freq x)`` on a fixed design.

    Each trajectory is one replicate of the whole design; the "time" axis is
    the design index and the design points are carried as inputs.
    """

    n_traj: int = 20
    n_points: int = 40
    x_range: tuple[float, float] = (-2.0, 2.0)
    freq: float = 1.5
    noise: float = 0.1

    def __post_init__(self):
        if self.n_traj < 1 or self.n_points < 2:
            raise ValueError("need n_traj >= 1 and n_points >= 2")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        self.x_range = (float(self.x_range[0]), float(self.x_range[1]))
        if self.x_range[1] <= self.x_range[0]:
            raise ValueError("x_range must be increasing")

    @property
    def design(self) -> np.ndarray:
        return np.linspace(*self.x_range, self.n_points)

    def to_dict(self) -> dict:
        return asdict(self)


def regression_truth(x, cfg: RegressionConfig) -> np.ndarray:
    return np.sin(cfg.freq * np.asarray(x, dtype=float))


def generate_regression_dataset(cfg: RegressionConfig, seed: int) -> TrajectoryEnsemble:
    x = cfg.design
    values = np.empty((cfg.n_traj, x.size))
    for j in range(cfg.n_traj):
        values[j] = regression_truth(x, cfg) + cfg.noise * _stream(seed, j).standard_normal(x.size)
    meta = {"generator": "regression", "config": cfg.to_dict(), "seed": int(seed)}
    inputs = np.broadcast_to(x, (cfg.n_traj, x.size)).copy()
    return TrajectoryEnsemble(np.arange(float(x.size)), values, meta, inputs)
