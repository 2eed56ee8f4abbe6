"""Black-box variational inference with a Gaussian surrogate posterior.

Two parameterisations: full covariance in two dimensions (mean, two log-stds
and the inverse-tanh correlation, five numbers in total) and mean-field
(mean and log-std per coordinate).  Gradients use the reparameterisation
trick and the KL to the ``N(center, I)`` prior is analytic.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .datagen import TrajectoryEnsemble
from .loss import LikelihoodSpec, log_likelihood
from .nets import ParamPartition, merge
from .node import DataModel
from .trainer import Adam, TrainingError, skips_initial, data_likelihood, model_predictions

log = logging.getLogger(__name__)


@dataclass
class GaussianSurrogate:
    mean: np.ndarray
    log_sigma: np.ndarray
    atanh_rho: float | None = None  # None means mean-field

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.log_sigma = np.asarray(self.log_sigma, dtype=float)
        if self.mean.shape != self.log_sigma.shape or self.mean.ndim != 1:
            raise ValueError("mean and log_sigma must be vectors of equal length")
        if self.atanh_rho is not None:
            if self.dim != 2:
                raise ValueError("full covariance is only supported in two dimensions")
            self.atanh_rho = float(self.atanh_rho)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def full_cov(self) -> bool:
        return self.atanh_rho is not None

    @property
    def n_params(self) -> int:
        return 2 * self.dim + (1 if self.full_cov else 0)

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)

    @property
    def rho(self) -> float:
        return float(np.tanh(self.atanh_rho)) if self.full_cov else 0.0

    def cholesky(self) -> np.ndarray:
        s = self.sigma
        if not self.full_cov:
            return np.diag(s)
        r = self.rho
        return np.array([[s[0], 0.0], [s[1] * r, s[1] * np.sqrt(1.0 - r * r)]])

    def covariance(self) -> np.ndarray:
        L = self.cholesky()
        return L @ L.T

    def to_vector(self) -> np.ndarray:
        extra = [self.atanh_rho] if self.full_cov else []
        return np.concatenate([self.mean, self.log_sigma, extra])

    @classmethod
    def from_vector(cls, v, dim: int, full_cov: bool) -> "GaussianSurrogate":
        v = np.asarray(v, dtype=float)
        if v.size != 2 * dim + (1 if full_cov else 0):
            raise ValueError("parameter vector has the wrong length")
        return cls(v[:dim], v[dim:2 * dim], float(v[2 * dim]) if full_cov else None)

    @classmethod
    def from_moments(cls, mean, sigma, rho: float | None = None) -> "GaussianSurrogate":
        if rho is not None and not -1 < rho < 1:
            raise ValueError("rho must lie in (-1, 1)")
        return cls(mean, np.log(sigma), None if rho is None else float(np.arctanh(rho)))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "log_sigma": self.log_sigma.tolist(), "atanh_rho": self.atanh_rho}

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianSurrogate":
        return cls(d["mean"], d["log_sigma"], d.get("atanh_rho"))


def reparam_sample(s: GaussianSurrogate, eps) -> np.ndarray:
    """``mean + L eps``; ``eps`` is ``(d,)`` or ``(M, d)``."""
    eps = np.asarray(eps, dtype=float)
    if eps.shape[-1] != s.dim:
        raise ValueError("eps has the wrong dimension")
    return s.mean + eps @ s.cholesky().T


def _split(v, dim: int, full_cov: bool):
    mean = ad.take(v, slice(0, dim))
    log_sigma = ad.take(v, slice(dim, 2 * dim))
    z = ad.take(v, slice(2 * dim, 2 * dim + 1)) if full_cov else None
    return mean, log_sigma, z


def _sample_var(v, eps: np.ndarray, dim: int, full_cov: bool):
    """Differentiable reparameterised draws ``(M, d)``."""
    mean, log_sigma, z = _split(v, dim, full_cov)
    sigma = ad.exp(log_sigma)
    if not full_cov:
        return ad.add(mean, ad.mul(eps, sigma))
    rho = ad.tanh(z)
    s0 = ad.take(sigma, slice(0, 1))
    s1 = ad.take(sigma, slice(1, 2))
    root = ad.exp(ad.scale(ad.log(ad.sub(1.0, ad.square(rho))), 0.5))
    x0 = ad.mul(eps[:, :1], s0)
    x1 = ad.mul(ad.add(ad.mul(eps[:, :1], rho), ad.mul(eps[:, 1:], root)), s1)
    return ad.add(mean, ad.concat([x0, x1], axis=-1))


def kl_to_standard(v, center: np.ndarray, dim: int, full_cov: bool):
    """KL(q || N(center, I)) as a differentiable scalar."""
    mean, log_sigma, z = _split(v, dim, full_cov)
    tr = ad.sum(ad.exp(ad.scale(log_sigma, 2.0)))
    quad = ad.sum(ad.square(ad.sub(mean, center)))
    logdet = ad.scale(ad.sum(log_sigma), 2.0)
    if full_cov:
        logdet = ad.add(logdet, ad.sum(ad.log(ad.sub(1.0, ad.square(ad.tanh(z))))))
    return ad.scale(ad.sub(ad.add(tr, quad), ad.add(logdet, float(dim))), 0.5)


@dataclass
class BbviConfig:
    steps: int = 2000
    lr: float = 1e-2
    n_samples: int = 8
    full_cov: bool = True
    use_likelihood: bool = True
    init_log_sigma: float = -2.0
    n_modes: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BbviReport:
    surrogate: GaussianSurrogate
    partition: ParamPartition
    w_d: np.ndarray
    prior_center: np.ndarray
    elbo_trace: list = field(default_factory=list)
    likelihood: LikelihoodSpec | None = None

    def sample(self, n: int, seed: int) -> np.ndarray:
        eps = np.random.default_rng(np.random.SeedSequence([int(seed), 5])).standard_normal((n, self.surrogate.dim))
        return reparam_sample(self.surrogate, eps)

    def full_samples(self, n: int, seed: int) -> np.ndarray:
        return np.asarray(merge(self.partition, self.w_d, self.sample(n, seed)))


def fit_bbvi(model: DataModel, data: TrajectoryEnsemble, w_mle, cfg: BbviConfig,
             partition: ParamPartition | None = None, prior_center=None,
             lik: LikelihoodSpec | None = None) -> BbviReport:
    """Maximise ``E_q[log pi(D|w)] - KL(q || N(center, I))`` by Adam.

    The surrogate covers the stochastic coordinates of ``partition`` (all by
    default); the rest stay at their MLE values.  ``prior_center`` defaults to
    the MLE of the stochastic coordinates.
    """
    w_mle = np.asarray(w_mle, dtype=float)
    partition = partition if partition is not None else ParamPartition.full(w_mle.size)
    w_d, w_s = partition.split(w_mle)
    dim = w_s.size
    if dim == 0:
        raise ValueError("BBVI needs at least one stochastic coordinate")
    full_cov = cfg.full_cov and dim == 2
    center = w_s.copy() if prior_center is None else np.asarray(prior_center, dtype=float)
    if cfg.use_likelihood and lik is None:
        mle_pred = ad.value(model_predictions(model, w_mle[None], data))[0]
        lik = data_likelihood(data, mle_pred, cfg.n_modes, skips_initial(model))
    init = GaussianSurrogate(w_s, np.full(dim, cfg.init_log_sigma), 0.0 if full_cov else None)
    v = init.to_vector()
    opt = Adam(cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 13]))
    trace = []

    def neg_elbo(p, eps):
        kl = kl_to_standard(p, center, dim, full_cov)
        if not cfg.use_likelihood:
            return kl
        ws = _sample_var(p, eps, dim, full_cov)
        params = merge(partition, w_d, ws)
        preds = model_predictions(model, params, data)
        return ad.sub(kl, ad.mean(log_likelihood(data.values, preds, lik)))

    for step in range(cfg.steps):
        eps = rng.standard_normal((cfg.n_samples, dim))
        try:
            val, (g,) = ad.value_and_grad(lambda p: neg_elbo(p, eps), v)
        except FloatingPointError as exc:
            raise TrainingError(f"non-finite BBVI objective at step {step}") from exc
        if not np.isfinite(val):
            raise TrainingError(f"non-finite BBVI objective at step {step}")
        trace.append(-float(val))
        v = opt.step(v, g)
    surrogate = GaussianSurrogate.from_vector(v, dim, full_cov)
    return BbviReport(surrogate, partition, w_d, center, trace, lik)
