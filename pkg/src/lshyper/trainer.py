"""MLE pretraining and joint training of the score network with the data model."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .datagen import TrajectoryEnsemble
from .loss import (
    LikelihoodSpec,
    elbo,
    estimate_sigma,
    log_likelihood,
    mixture_log_likelihood,
    two_mode_assignment,
)
from .metrics import w1_over_time
from .nets import MlpSpec, ParamPartition, init_params, last_layer_indices, merge
from .node import DataModel, predict
from .sampler import PriorSpec, SamplerConfig, ScoreNet, replica_noise, simulate_replicas

log = logging.getLogger(__name__)

VARIANTS = ("full", "bll-fixed", "bll-reopt")


class TrainingError(FloatingPointError):
    pass


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(x)
            self.v = np.zeros_like(x)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        return x - self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainConfig:
    epochs: int = 200
    mle_epochs: int = 2000
    lr_mle: float = 1e-3
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    score_hidden: tuple[int, ...] = (2, 2)
    score_residual: bool = True
    prior_center: str = "mle"  # or "zero"
    n_modes: int = 1
    aggregation: str = "replica"  # or "mixture"
    track_w1: bool = True
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.sampler, dict):
            self.sampler = SamplerConfig(**self.sampler)
        self.score_hidden = tuple(self.score_hidden)
        if self.epochs < 0 or self.mle_epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0 or self.lr_mle <= 0:
            raise ValueError("learning rates must be > 0")
        if self.prior_center not in ("mle", "zero"):
            raise ValueError("prior_center must be 'mle' or 'zero'")
        if self.aggregation not in ("replica", "mixture"):
            raise ValueError("aggregation must be 'replica' or 'mixture'")
        if self.n_modes not in (1, 2):
            raise ValueError("n_modes must be 1 or 2")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["score_hidden"] = list(self.score_hidden)
        return d


@dataclass
class TrainReport:
    variant: str
    partition: ParamPartition
    w_mle: np.ndarray
    w_d: np.ndarray
    theta: np.ndarray
    score_spec: MlpSpec
    prior_center: np.ndarray
    ensemble: np.ndarray  # (R, n_stochastic) endpoint weights
    loss_trace: list = field(default_factory=list)
    kl_trace: list = field(default_factory=list)
    loglik_trace: list = field(default_factory=list)
    w1_trace: list = field(default_factory=list)
    score_residual: bool = True
    likelihood: LikelihoodSpec | None = None

    @property
    def full_ensemble(self) -> np.ndarray:
        return np.asarray(merge(self.partition, self.w_d, self.ensemble))

    def score_net(self) -> ScoreNet:
        return ScoreNet(self.score_spec, self.theta, self.score_residual)

    def prior(self) -> PriorSpec:
        return PriorSpec(self.prior_center)


# ---------------------------------------------------------------- helpers


def _time_mask(n_times: int, skip_initial: bool = True) -> np.ndarray:
    # for ODE models t_0 is the initial condition, not a model output
    mask = np.ones(n_times, dtype=bool)
    mask[0] = not skip_initial
    return mask


def skips_initial(model: DataModel) -> bool:
    return model.rhs_spec is not None


def _trajectory_independent(model: DataModel) -> bool:
    return not model.initial_from_data and model.input_dim == 0


def model_predictions(model: DataModel, params, data: TrajectoryEnsemble):
    """Predictions ``(R, N or 1, T, obs)`` for batched params."""
    if _trajectory_independent(model):
        h0 = model.initial_state(n_traj=1)
        return predict(model, params, data.times, h0)
    h0 = model.initial_state(data.values, data.n_traj)
    return predict(model, params, data.times, h0, data.inputs)


def partition_for(variant: str, model: DataModel) -> ParamPartition:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    n = model.n_params
    if variant == "full":
        return ParamPartition.full(n)
    idx = []
    if model.rhs_spec is not None:
        idx.append(last_layer_indices(model.rhs_spec))
    if model.obs_spec is not None:
        idx.append(last_layer_indices(model.obs_spec, offset=model.n_rhs_params))
    return ParamPartition(n, np.concatenate(idx))


def data_likelihood(data: TrajectoryEnsemble, mle_pred, n_modes: int = 1,
                    skip_initial: bool = True) -> LikelihoodSpec:
    mask = _time_mask(data.n_times, skip_initial)
    if n_modes == 1:
        est = estimate_sigma(data, mle_pred)
        return LikelihoodSpec(np.array([1.0]), est.sigma, time_mask=mask)
    labels, _, alpha = two_mode_assignment(data.values[:, -1, 0])
    est = estimate_sigma(data, mle_pred, assignment=labels, n_modes=2)
    return LikelihoodSpec(alpha, est.sigma, assignment=labels, time_mask=mask)


# ---------------------------------------------------------------- MLE


def fit_mle(model: DataModel, data: TrajectoryEnsemble, cfg: TrainConfig, init=None,
            return_trace: bool = False):
    """Adam on the single-mode Gaussian likelihood with sigma from the data spread."""
    if data.n_traj < 1:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
    if init is None:
        parts = [init_params(model.rhs_spec, rng)] if model.rhs_spec else []
        if model.obs_spec is not None:
            parts.append(init_params(model.obs_spec, rng))
        w = np.concatenate(parts)
    else:
        w = np.array(init, dtype=float)
    mask = _time_mask(data.n_times, skips_initial(model))
    if data.n_traj >= 2:
        sd = data.values[..., 0].std(axis=0, ddof=1)
        sigma = np.maximum(sd, 1e-6 * max(float(np.ptp(data.values)), 1e-300))
    else:
        sigma = np.ones(data.n_times)
    lik = LikelihoodSpec(np.array([1.0]), sigma, time_mask=mask)
    opt = Adam(cfg.lr_mle, cfg.beta1, cfg.beta2, cfg.adam_eps)

    def neg_ll(p):
        preds = model_predictions(model, ad.reshape(p, (1, -1)), data)
        return ad.neg(ad.sum(log_likelihood(data.values, preds, lik)))

    trace = []
    best = (np.inf, w)
    for epoch in range(cfg.mle_epochs + 1):
        try:
            val, (g,) = ad.value_and_grad(neg_ll, w)
        except FloatingPointError as exc:
            raise TrainingError(f"non-finite MLE loss at epoch {epoch}") from exc
        if not (np.isfinite(val) and np.all(np.isfinite(g))):
            raise TrainingError(f"non-finite MLE loss at epoch {epoch}")
        trace.append(val)
        if val < best[0]:
            best = (val, w.copy())
        if epoch == cfg.mle_epochs:
            break
        w = opt.step(w, g)
    w_best = best[1]
    return (w_best, trace) if return_trace else w_best


# ---------------------------------------------------------------- LS training


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(epoch), 11]).generate_state(1)[0])


def train(variant: str, model: DataModel, data: TrajectoryEnsemble, cfg: TrainConfig,
          w_mle: np.ndarray, partition: ParamPartition | None = None,
          lik: LikelihoodSpec | None = None, callback=None) -> TrainReport:
    """Joint optimisation of the score network and, unless fixed, ``w^(d)``."""
    partition = partition if partition is not None else partition_for(variant, model)
    w_mle = np.asarray(w_mle, dtype=float)
    w_d0, w_s0 = partition.split(w_mle)
    ns = partition.n_stochastic
    if lik is None:
        mle_pred = ad.value(model_predictions(model, w_mle[None], data))[0]
        lik = data_likelihood(data, mle_pred, cfg.n_modes, skips_initial(model))
    center = w_s0.copy() if cfg.prior_center == "mle" else np.zeros(ns)
    prior = PriorSpec(center)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    score = ScoreNet.create(max(ns, 1), cfg.score_hidden, rng, cfg.score_residual) if ns else None
    theta = score.theta.copy() if score else np.zeros(0)
    w_d = w_d0.copy()
    update_d = variant != "bll-fixed" and w_d.size > 0
    opt_theta = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    opt_d = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    report = TrainReport(variant, partition, w_mle, w_d, theta, score.spec if score else MlpSpec((1, 1)),
                         center, np.zeros((cfg.sampler.n_replicas, ns)),
                         score_residual=cfg.score_residual, likelihood=lik)
    scfg = cfg.sampler

    for epoch in range(cfg.epochs):
        ecfg = SamplerConfig(**{**scfg.to_dict(), "seed": _epoch_seed(cfg.seed, epoch)})
        with ad.Tape() as tape:
            th = tape.leaf(theta)
            wd = tape.leaf(w_d)
            if ns:
                res = simulate_replicas(
                    lambda w: score.drift(w, prior, th), prior, ecfg, np.broadcast_to(w_s0, (ecfg.n_replicas, ns)),
                    drift_const=lambda w: score.drift(w, prior, theta),
                )
                ws, kl = res.endpoints, res.kl
                params = merge(partition, wd, ws)
            else:
                ws, kl = np.zeros((ecfg.n_replicas, 0)), 0.0
                params = ad.broadcast_to(wd, (ecfg.n_replicas, w_d.size))
            preds = model_predictions(model, params, data)
            if cfg.aggregation == "mixture":
                ll = mixture_log_likelihood(data.values, preds, lik)
                objective = ad.sub(ll, kl)
                ll_val = float(ad.value(ll))
            else:
                lls = log_likelihood(data.values, preds, lik)
                objective = elbo(lls, kl)
                ll_val = float(np.mean(ad.value(lls)))
            loss = ad.neg(objective)
            if not np.isfinite(ad.value(loss)):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            tape.backward(loss)
            g_theta, g_d = th.gradient(), wd.gradient()
        report.loss_trace.append(float(ad.value(loss)))
        report.kl_trace.append(float(ad.value(kl)))
        report.loglik_trace.append(ll_val)
        if cfg.track_w1:
            report.w1_trace.append(float(np.mean(w1_over_time(ad.value(preds), data.values, lik.time_mask))))
        if ns:
            theta = opt_theta.step(theta, g_theta)
        if update_d:
            w_d = opt_d.step(w_d, g_d)
        report.w_d, report.theta = w_d, theta
        if callback is not None:
            callback(epoch, report)
        log.debug("epoch %d loss %.6g kl %.4g", epoch, report.loss_trace[-1], report.kl_trace[-1])

    if variant == "bll-fixed" and not np.array_equal(w_d, w_d0):
        raise TrainingError("deterministic weights changed in bll-fixed mode")
    report.w_d = w_d
    report.theta = theta
    if ns:
        score = ScoreNet(score.spec, theta, cfg.score_residual)
        report.ensemble = sample_posterior(report, scfg, seed=_epoch_seed(cfg.seed, cfg.epochs),
                                           plain=cfg.epochs == 0)
    return report


def sample_posterior(report: TrainReport, scfg: SamplerConfig, seed: int, n_replicas: int | None = None,
                     plain: bool = False) -> np.ndarray:
    """Endpoint weights from the trained sampler; ``plain`` skips the SDE
    and returns the perturbed initial conditions."""
    ns = report.partition.n_stochastic
    n = n_replicas or scfg.n_replicas
    cfg = SamplerConfig(**{**scfg.to_dict(), "seed": seed, "n_replicas": n, "truncate": 0})
    _, w_s0 = report.partition.split(report.w_mle)
    w_init = np.broadcast_to(w_s0, (n, ns))
    if plain:
        z0, _ = replica_noise(SamplerConfig(**{**cfg.to_dict(), "n_steps": 0}), ns)
        return w_init + cfg.eps_init * z0
    score, prior = report.score_net(), report.prior()
    res = simulate_replicas(lambda w: score.drift(w, prior), prior, cfg, w_init,
                            drift_const=lambda w: score.drift(w, prior))
    return np.asarray(res.endpoints)


def predictive(model: DataModel, report: TrainReport, data: TrajectoryEnsemble, ensemble=None) -> np.ndarray:
    ens = report.ensemble if ensemble is None else ensemble
    params = np.asarray(merge(report.partition, report.w_d, ens))
    if params.ndim == 1:
        params = params[None]
    return np.asarray(model_predictions(model, params, data))
