"""Langevin weight sampler.

Replicas follow ``dw = f(w) dtau + gamma sqrt(2) dB`` integrated with
Euler-Maruyama.  Noise for replica ``r`` comes from its own stream keyed by
``(seed, r)``: the first draw is the initial perturbation, the rest are the
Brownian increments, so adding or reordering replicas never changes a path.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .loss import kl_step
from .nets import MlpSpec, forward, init_params

DIVERGENCE_LIMIT = 1e6


class SamplerDivergence(FloatingPointError):
    def __init__(self, replica: int, step: int):
        self.replica = replica
        self.step = step
        super().__init__(f"replica {replica} diverged at step {step}")


@dataclass
class SamplerConfig:
    dtau: float = 1e-3
    n_steps: int = 10_000
    n_replicas: int = 50
    gamma0: float = 1.0
    anneal_fraction: float = 0.2
    eps_init: float = 1e-5
    seed: int = 0
    truncate: int | None = None

    def __post_init__(self):
        if self.dtau <= 0:
            raise ValueError("dtau must be > 0")
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if self.n_replicas < 2:
            raise ValueError("need at least 2 replicas")
        if self.gamma0 < 1:
            raise ValueError("gamma0 must be >= 1")
        if not 0 <= self.anneal_fraction <= 1:
            raise ValueError("anneal_fraction must lie in [0, 1]")
        if self.eps_init < 0:
            raise ValueError("eps_init must be >= 0")
        if self.truncate is not None and self.truncate < 0:
            raise ValueError("truncate must be >= 0")

    @property
    def tau_final(self) -> float:
        return self.n_steps * self.dtau

    def gamma_schedule(self) -> np.ndarray:
        """Diffusion scale per step: gamma0 on the leading fraction, then 1."""
        g = np.ones(self.n_steps)
        if self.gamma0 > 1:
            g[: int(round(self.anneal_fraction * self.n_steps))] = self.gamma0
        return g

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PriorSpec:
    """OU prior ``dw = -(w - center) dtau + gamma sqrt(2) dB``."""

    center: np.ndarray
    gamma0: float = 1.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)


def prior_drift(w, prior: PriorSpec):
    c = prior.center
    if ad.value(w).shape[-1] != c.shape[-1]:
        raise ValueError("weight and prior center sizes differ")
    return ad.neg(ad.sub(w, c))


def em_step(w, drift, dtau: float, gamma: float, dB):
    """``w + drift dtau + gamma sqrt(2) dB``."""
    out = ad.add(ad.add(w, ad.scale(drift, dtau)), np.sqrt(2.0) * gamma * np.asarray(dB))
    if not np.all(np.isfinite(ad.value(out))):
        raise FloatingPointError("non-finite weights after Euler-Maruyama step")
    return out


@dataclass
class ScoreNet:
    """Learned drift ``NN_f``.

    The network sees ``w - center``.  With ``residual`` set, the drift is
    the prior drift plus the network output, so an all-zero output layer
    reproduces the prior and the path KL reduces to the network output norm.
    """

    spec: MlpSpec
    theta: np.ndarray
    residual: bool = True

    def __post_init__(self):
        if self.spec.n_in != self.spec.n_out:
            raise ValueError("score network must map R^d to R^d")
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (self.spec.n_params,):
            raise ValueError("theta size does not match spec")

    @classmethod
    def create(cls, dim: int, hidden=(2, 2), rng=None, residual: bool = True,
               output_scale: float = 0.0) -> "ScoreNet":
        """Fresh network; ``output_scale`` shrinks the final layer (0 zeroes it)."""
        rng = rng if rng is not None else np.random.default_rng(0)
        spec = MlpSpec.build(dim, hidden, dim, "tanh")
        theta = init_params(spec, rng)
        ws, bs = spec.layer_slices()[-1]
        theta[ws.start:bs.stop] *= output_scale
        return cls(spec, theta, residual)

    def drift(self, w, prior: PriorSpec, theta=None):
        theta = self.theta if theta is None else theta
        out = forward(self.spec, theta, ad.sub(w, prior.center))
        if self.residual:
            out = ad.add(prior_drift(w, prior), out)
        return out


@dataclass
class SamplerResult:
    endpoints: object  # (R, d) array or Var
    kl: object  # scalar or Var
    initial: np.ndarray
    paths: np.ndarray | None = None  # (S+1, R, d)


def replica_noise(cfg: SamplerConfig, dim: int, replicas=None):
    """Initial standard-normal draws (R, d) and Brownian increments (S, R, d)."""
    replicas = range(cfg.n_replicas) if replicas is None else replicas
    z0, dB = [], []
    for r in replicas:
        rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), int(r)]))
        z0.append(rng.standard_normal(dim))
        dB.append(rng.standard_normal((cfg.n_steps, dim)))
    z0 = np.array(z0)
    dB = np.stack(dB, axis=1) * np.sqrt(cfg.dtau) if cfg.n_steps else np.zeros((0, len(z0), dim))
    return z0, dB


def _check_divergence(w: np.ndarray, step: int) -> None:
    bad = ~np.all(np.isfinite(w) & (np.abs(w) <= DIVERGENCE_LIMIT), axis=-1)
    if np.any(bad):
        raise SamplerDivergence(int(np.flatnonzero(bad)[0]), step)


def simulate_replicas(drift_fn, prior: PriorSpec, cfg: SamplerConfig, w_init,
                      record_paths: bool = False, noise=None, drift_const=None) -> SamplerResult:
    """Integrate all replicas to ``tau_f``.

    ``drift_fn(w)`` returns the posterior drift for a batch ``(R, d)``; it may
    build tape nodes, in which case endpoints and KL are differentiable.  With
    ``cfg.truncate = K`` only the last ``K`` steps are recorded on the tape.
    ``drift_const`` is an untaped equivalent of ``drift_fn`` used for the
    steps before the truncation window.  The KL accumulates only on steps with
    unit diffusion, where prior and posterior share the same noise scale.
    """
    w_init = np.asarray(w_init, dtype=float)
    dim = w_init.shape[-1]
    z0, dB = noise if noise is not None else replica_noise(cfg, dim)
    w0 = w_init + cfg.eps_init * z0
    gammas = cfg.gamma_schedule()
    n_rep = w0.shape[0]
    first_taped = 0 if cfg.truncate is None else max(cfg.n_steps - cfg.truncate, 0)
    paths = [w0.copy()] if record_paths else None
    w = w0
    kl = 0.0
    for s in range(cfg.n_steps):
        g = gammas[s]
        if s < first_taped:
            if drift_const is not None:
                f = drift_const(w)
            else:
                with ad.Tape(check_finite=False):
                    f = ad.value(drift_fn(w))
            f0 = -(w - prior.center)
            if g == 1.0:
                kl = kl + 0.5 * cfg.dtau * float(np.sum((f - f0) ** 2)) / n_rep
        else:
            f = drift_fn(w)
            if g == 1.0:
                kl = ad.add(kl, kl_step(f, prior_drift(w, prior), 1.0, cfg.dtau, n_rep))
        w = em_step(w, f, cfg.dtau, g, dB[s])
        wv = ad.value(w)
        _check_divergence(wv, s + 1)
        if record_paths:
            paths.append(np.array(wv))
    return SamplerResult(w, kl, w0, np.array(paths) if record_paths else None)


def sample_with_score(score: ScoreNet, prior: PriorSpec, cfg: SamplerConfig, w_init,
                      record_paths: bool = False) -> SamplerResult:
    """Non-differentiable sampling with a fixed score network."""

    def drift(w):
        return score.drift(w, prior)

    return simulate_replicas(drift, prior, cfg, w_init, record_paths)
