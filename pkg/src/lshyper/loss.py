"""ELBO pieces: Gaussian-mixture trajectory likelihood, sigma estimation and
the discretised path-space KL between posterior and prior weight SDEs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .datagen import TrajectoryEnsemble

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class LikelihoodSpec:
    """Mixture weights ``alpha`` (L,) and per-time per-mode stds ``sigma`` (T, L).

    ``assignment`` optionally maps each data trajectory to its mode; when
    present a trajectory is scored only against its own mode's component.
    ``time_mask`` selects the grid points entering the likelihood.
    """

    alpha: np.ndarray
    sigma: np.ndarray
    assignment: np.ndarray | None = None
    time_mask: np.ndarray | None = None

    def __post_init__(self):
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        s = np.asarray(self.sigma, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        self.sigma = s
        if self.alpha.size not in (1, 2):
            raise ValueError("only one or two modes are supported")
        if s.shape[-1] != self.alpha.size:
            raise ValueError("sigma must have one column per mode")
        if abs(self.alpha.sum() - 1.0) > 1e-12 or np.any(self.alpha < 0):
            raise ValueError("mode weights must be non-negative and sum to 1")
        if np.any(s <= 0):
            raise ValueError("all sigma must be > 0")

    @property
    def n_modes(self) -> int:
        return self.alpha.size

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha.tolist(),
            "sigma": self.sigma.tolist(),
            "assignment": None if self.assignment is None else np.asarray(self.assignment).tolist(),
            "time_mask": None if self.time_mask is None else np.asarray(self.time_mask).tolist(),
        }


@dataclass
class SigmaEstimate:
    sigma_data: np.ndarray
    sigma_mle: np.ndarray
    sigma: np.ndarray


def combine_sigma(sigma_data, sigma_mle) -> np.ndarray:
    return np.sqrt(np.square(sigma_data) + np.square(sigma_mle))


def estimate_sigma(data: TrajectoryEnsemble, mle_pred, assignment=None, n_modes: int = 1,
                   floor: float | None = None) -> SigmaEstimate:
    """Per-time (and per-mode) data std combined with the MLE discrepancy.

    ``mle_pred`` is ``(T,)``, ``(N, T)`` or ``(N, T, 1)``; per-trajectory
    predictions are averaged before comparing with the data mean.  Only the
    first observable is used.  ``floor`` defaults to 1e-6 of the data range.
    """
    y = data.values[..., 0]
    if y.shape[0] < 2:
        raise ValueError("need at least 2 trajectories to estimate a std")
    pred = np.asarray(mle_pred, dtype=float)
    if pred.ndim == 3:
        pred = pred[..., 0]
    if pred.ndim == 2:
        pred = pred.mean(axis=0)
    if floor is None:
        floor = 1e-6 * max(float(np.ptp(y)), 1e-300)
    if assignment is None:
        assignment = np.zeros(y.shape[0], dtype=int)
        n_modes = 1
    assignment = np.asarray(assignment)
    sd = np.empty((y.shape[1], n_modes))
    sm = np.empty((y.shape[1], n_modes))
    for l in range(n_modes):
        yl = y[assignment == l]
        if yl.shape[0] < 2:
            raise ValueError(f"mode {l} has fewer than 2 trajectories")
        sd[:, l] = yl.std(axis=0, ddof=1)
        # MLE discrepancy against the overall mean; a single MLE curve cannot
        # sit on both modes
        sm[:, l] = np.abs(y.mean(axis=0) - pred) if n_modes == 1 else 0.0
    sigma = np.maximum(combine_sigma(sd, sm), floor)
    return SigmaEstimate(sd, sm, sigma)


def two_mode_assignment(final_values, n_iter: int = 100):
    """2-means clustering of final-time values.

    Returns (labels, centers, alpha) with mode 0 the lower center.
    """
    x = np.asarray(final_values, dtype=float).ravel()
    centers = np.array([np.percentile(x, 25), np.percentile(x, 75)])
    labels = np.zeros(x.size, dtype=int)
    for _ in range(n_iter):
        new = (np.abs(x - centers[1]) < np.abs(x - centers[0])).astype(int)
        if np.array_equal(new, labels) and _ > 0:
            break
        labels = new
        for l in range(2):
            if np.any(labels == l):
                centers[l] = x[labels == l].mean()
    order = np.argsort(centers)
    labels = np.argsort(order)[labels]
    centers = centers[order]
    alpha = np.array([np.mean(labels == 0), np.mean(labels == 1)])
    return labels, centers, alpha


def log_likelihood(data_values, preds, lik: LikelihoodSpec):
    """Log-likelihood of all data under each replica's predictions.

    ``data_values``: (N, T) or (N, T, 1).  ``preds``: (R, N, T), (R, N, T, 1)
    or (R, T) for predictions shared across trajectories.  Returns (R,).
    Mixture over modes when ``lik.n_modes == 2``; component ``l`` is centred on
    the replica prediction with std ``sigma[:, l]``.
    """
    y = np.asarray(data_values, dtype=float)
    if y.ndim == 3:
        y = y[..., 0]
    pv = ad.value(preds)
    if pv.ndim == 4:
        preds = ad.reshape(preds, pv.shape[:-1])
        pv = ad.value(preds)
    if pv.ndim == 2:
        preds = ad.reshape(preds, (pv.shape[0], 1, pv.shape[1]))
        pv = ad.value(preds)
    if pv.shape[-1] != y.shape[-1] or pv.shape[-2] not in (1, y.shape[0]):
        raise ValueError(f"prediction shape {pv.shape} does not match data {y.shape}")
    sigma = lik.sigma
    if np.any(sigma <= 0):
        raise ValueError("sigma must be > 0")
    if lik.time_mask is not None:
        mask = np.asarray(lik.time_mask, dtype=bool)
        y = y[:, mask]
        sigma = sigma[mask]
        preds = ad.take(preds, (Ellipsis, np.flatnonzero(mask)))
    resid2 = ad.square(ad.sub(preds, y[None]))  # (R, N, T)
    if lik.n_modes == 1:
        s2 = sigma[:, 0] ** 2
        logdens = ad.sub(-0.5 * (LOG_2PI + np.log(s2)), ad.div(resid2, 2.0 * s2))
        return ad.sum(logdens, axis=(1, 2))
    if lik.assignment is not None:
        a = np.asarray(lik.assignment, dtype=int)
        s2 = sigma[:, a].T ** 2  # (N, T)
        logw = np.log(lik.alpha[a])[:, None]
        logdens = ad.sub(logw - 0.5 * (LOG_2PI + np.log(s2)), ad.div(resid2, 2.0 * s2))
        return ad.sum(logdens, axis=(1, 2))
    comps = []
    for l in range(lik.n_modes):
        s2 = sigma[:, l] ** 2
        c = ad.sub(np.log(lik.alpha[l]) - 0.5 * (LOG_2PI + np.log(s2)), ad.div(resid2, 2.0 * s2))
        comps.append(ad.reshape(c, ad.value(c).shape + (1,)))
    return ad.sum(ad.logsumexp(ad.concat(comps, axis=-1), axis=-1), axis=(1, 2))


def mixture_log_likelihood(data_values, preds, lik: LikelihoodSpec):
    """Per-trajectory log-likelihood under the replica ensemble as a mixture.

    ``sum_j log( mean_i pi(D_j | w_i) )``: each data trajectory may be explained
    by a different replica.  With a mode assignment each trajectory uses its
    own mode's sigma; mode weights are carried by the replicas themselves.
    Returns a scalar.
    """
    y = np.asarray(data_values, dtype=float)
    if y.ndim == 3:
        y = y[..., 0]
    pv = ad.value(preds)
    if pv.ndim == 4:
        preds = ad.reshape(preds, pv.shape[:-1])
    if lik.assignment is not None:
        sigma = lik.sigma[:, np.asarray(lik.assignment, dtype=int)].T  # (N, T)
    else:
        sigma = np.broadcast_to(lik.sigma[:, 0], y.shape)
    if lik.time_mask is not None:
        mask = np.asarray(lik.time_mask, dtype=bool)
        y, sigma = y[:, mask], sigma[:, mask]
        preds = ad.take(preds, (Ellipsis, np.flatnonzero(mask)))
    s2 = sigma**2
    resid2 = ad.square(ad.sub(preds, y[None]))
    norm = np.sum(-0.5 * (LOG_2PI + np.log(s2)), axis=1)  # (N,)
    per = ad.sub(norm, ad.sum(ad.div(resid2, 2.0 * s2), axis=2))  # (R, N)
    n_rep = ad.value(per).shape[0]
    return ad.sum(ad.sub(ad.logsumexp(ad.swapaxes(per, 0, 1), axis=-1), np.log(n_rep)))


def kl_step(post_drift, prior_drift, gamma: float, dtau: float, n_replicas: int):
    """Contribution of one Euler-Maruyama step to the path KL (left-point drifts)."""
    diff = ad.sub(post_drift, prior_drift)
    return ad.scale(ad.sum(ad.square(diff)), 0.5 * dtau / (gamma * gamma * n_replicas))


def path_kl(post_drifts, prior_drifts, gamma, dtau: float, n_replicas: int):
    """``(1/N_R) sum_r sum_s 1/2 |(f* - f0)/gamma|^2 dtau``.

    Drifts are sequences over steps of ``(R, d)`` arrays (or one stacked
    ``(S, R, d)`` array).  ``gamma`` may be a scalar or per-step sequence.
    """
    n = len(post_drifts)
    gammas = np.broadcast_to(np.asarray(gamma, dtype=float), (n,))
    total = 0.0
    for s in range(n):
        total = ad.add(total, kl_step(post_drifts[s], prior_drifts[s], gammas[s], dtau, n_replicas))
    return total


def elbo(loglik, kl):
    """Mean replica log-likelihood minus the path KL.

    The mean is reduced in sorted order so the value does not depend on the
    order of the replicas.
    """
    lv = np.ravel(ad.value(loglik))
    if lv.size < 1:
        raise ValueError("need at least one replica")
    ordered = ad.take(ad.reshape(loglik, (-1,)), np.argsort(lv, kind="stable"))
    return ad.sub(ad.mean(ordered), kl)


def gaussian_kl(mu_q, cov_q, mu_p, cov_p) -> float:
    """KL(N(mu_q, cov_q) || N(mu_p, cov_p)) for full covariances."""
    mu_q, mu_p = np.atleast_1d(mu_q), np.atleast_1d(mu_p)
    cov_q, cov_p = np.atleast_2d(cov_q), np.atleast_2d(cov_p)
    d = mu_q.size
    inv_p = np.linalg.inv(cov_p)
    diff = mu_p - mu_q
    _, ld_p = np.linalg.slogdet(cov_p)
    _, ld_q = np.linalg.slogdet(cov_q)
    return 0.5 * (np.trace(inv_p @ cov_q) + diff @ inv_p @ diff - d + ld_p - ld_q)
