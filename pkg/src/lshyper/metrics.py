"""Evaluation metrics and reference oracles.

Wasserstein-1 between 1-d samples, Gaussian KDE, distance correlation,
moment summaries of weight ensembles, and closed-form statistics and score
of the (W, b) posterior of the linear relaxation exemplar.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EmpiricalCdf:
    """Right-continuous step CDF with jumps at ``values``."""

    values: np.ndarray
    cumulative: np.ndarray

    @classmethod
    def from_samples(cls, samples) -> "EmpiricalCdf":
        x = np.sort(np.asarray(samples, dtype=float).ravel())
        if x.size == 0:
            raise ValueError("empty sample")
        uniq, counts = np.unique(x, return_counts=True)
        cum = np.cumsum(counts) / x.size
        cum[-1] = 1.0
        return cls(uniq, cum)

    def __call__(self, y):
        idx = np.searchsorted(self.values, np.asarray(y, dtype=float), side="right")
        return np.concatenate([[0.0], self.cumulative])[idx]


def w1_distance(a, b) -> float:
    """Area between the two empirical CDFs, integrated exactly."""
    ca, cb = EmpiricalCdf.from_samples(a), EmpiricalCdf.from_samples(b)
    grid = np.union1d(ca.values, cb.values)
    if grid.size < 2:
        return 0.0
    # both CDFs are constant on [grid[k], grid[k+1])
    diff = np.abs(ca(grid[:-1]) - cb(grid[:-1]))
    return float(np.sum(diff * np.diff(grid)))


def w1_over_time(pred_values, data_values, time_mask=None) -> np.ndarray:
    """W1 per time slice between pooled predictions and data (first observable).

    ``pred_values`` is ``(R, N|1, T[, obs])`` or ``(S, T[, obs])``;
    ``data_values`` is ``(N, T[, obs])``.
    """
    p = np.asarray(pred_values, dtype=float)
    d = np.asarray(data_values, dtype=float)
    if d.ndim == 3:
        d = d[..., 0]
    n_t = d.shape[1]
    if p.ndim >= 3 and p.shape[-2] == n_t and p.shape[-1] != n_t:
        p = p[..., 0]
    if p.shape[-1] != n_t:
        raise ValueError("prediction and data time grids differ")
    p = p.reshape(-1, n_t)
    cols = np.arange(n_t) if time_mask is None else np.flatnonzero(np.asarray(time_mask, dtype=bool))
    return np.array([w1_distance(p[:, k], d[:, k]) for k in cols])


def scott_bandwidth(samples) -> float:
    x = np.asarray(samples, dtype=float).ravel()
    sd = x.std(ddof=1) if x.size > 1 else 0.0
    return float(sd * x.size ** (-0.2)) if sd > 0 else 1.0


def kde(samples, grid, bandwidth: float | None = None) -> np.ndarray:
    """Gaussian kernel density on ``grid``; Scott's rule when no bandwidth."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty sample")
    h = scott_bandwidth(x) if bandwidth is None else float(bandwidth)
    if h <= 0:
        raise ValueError("bandwidth must be > 0")
    g = np.asarray(grid, dtype=float)
    out = np.zeros(g.shape)
    # chunk to bound memory for large samples
    for start in range(0, x.size, 4096):
        u = (g[..., None] - x[start:start + 4096]) / h
        out += np.exp(-0.5 * u * u).sum(axis=-1)
    return out / (x.size * h * np.sqrt(2.0 * np.pi))


def _centered_distances(x: np.ndarray) -> np.ndarray:
    d = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=-1))
    return d - d.mean(axis=0) - d.mean(axis=1)[:, None] + d.mean()


def distance_correlation(x, y) -> float:
    """Sample distance correlation of paired observations (rows)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x = x.reshape(x.shape[0], -1)
    y = y.reshape(y.shape[0], -1)
    if x.shape[0] != y.shape[0]:
        raise ValueError("x and y need the same number of samples")
    if x.shape[0] < 4:
        raise ValueError("need at least 4 samples")
    a, b = _centered_distances(x), _centered_distances(y)
    dcov2 = max((a * b).mean(), 0.0)
    vx, vy = (a * a).mean(), (b * b).mean()
    if vx <= 0 or vy <= 0:
        return 0.0
    return float(min(np.sqrt(dcov2 / np.sqrt(vx * vy)), 1.0))


def distance_correlation_matrix(samples) -> np.ndarray:
    """Pairwise dCor between the columns of ``samples`` (n, d)."""
    s = np.asarray(samples, dtype=float)
    d = s.shape[1]
    out = np.eye(d)
    for i in range(d):
        for j in range(i + 1, d):
            out[i, j] = out[j, i] = distance_correlation(s[:, i], s[:, j])
    return out


@dataclass
class EnsembleStats:
    mean: np.ndarray
    var: np.ndarray
    cov: np.ndarray
    corr: np.ndarray

    @property
    def rho(self) -> float:
        return float(self.corr[0, 1])

    def to_dict(self) -> dict:
        return {k: np.asarray(v).tolist() for k, v in vars(self).items()}


def ensemble_stats(samples) -> EnsembleStats:
    """Unbiased moments of an ensemble ``(n, d)``."""
    s = np.asarray(samples, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    if s.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    cov = np.atleast_2d(np.cov(s, rowvar=False, ddof=1))
    var = np.diag(cov).copy()
    sd = np.sqrt(var)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = cov / np.outer(sd, sd)
    corr[~np.isfinite(corr)] = 0.0
    np.fill_diagonal(corr, np.where(sd > 0, 1.0, 0.0))
    return EnsembleStats(s.mean(axis=0), var, cov, corr)


@dataclass(frozen=True)
class RelaxationHyper:
    """(mean, std) of the rate and level distributions; W = -rate, b = rate * level."""

    rate_mean: float = 8.0
    rate_std: float = 0.8
    level_mean: float = 1.0
    level_std: float = 0.1

    @property
    def score_hyper(self) -> tuple[float, float, float, float]:
        return (-self.rate_mean, self.rate_std, self.level_mean, self.level_std)


def theoretical_stats(h: RelaxationHyper = RelaxationHyper()) -> dict:
    """Moments of (W, b) = (-g, g y) with independent g, y."""
    mg, sg, my, sy = h.rate_mean, h.rate_std, h.level_mean, h.level_std
    var_w = sg**2
    var_b = (mg**2 + sg**2) * (my**2 + sy**2) - (mg * my) ** 2
    cov = -(sg**2) * my
    return {
        "mean_W": -mg,
        "mean_b": mg * my,
        "var_W": var_w,
        "var_b": var_b,
        "cov_Wb": cov,
        "rho_Wb": cov / np.sqrt(var_w * var_b),
    }


def sample_wb(n: int, rng: np.random.Generator, h: RelaxationHyper = RelaxationHyper()) -> np.ndarray:
    g = rng.normal(h.rate_mean, h.rate_std, n)
    y = rng.normal(h.level_mean, h.level_std, n)
    return np.column_stack([-g, g * y])


def _check_hyper(W, sigma_w, sigma_y):
    if np.any(np.asarray(W) == 0):
        raise ValueError("W = 0: change of variables is singular")
    if sigma_w <= 0 or sigma_y <= 0:
        raise ValueError("stds must be > 0")


def log_density_wb(W, b, mu_w, sigma_w, mu_y, sigma_y):
    """log f(W, b) of the pushforward of independent normals for (W, y = -b/W)."""
    _check_hyper(W, sigma_w, sigma_y)
    W = np.asarray(W, dtype=float)
    b = np.asarray(b, dtype=float)
    y = -b / W
    return (
        -np.log(np.abs(W))
        - 0.5 * ((W - mu_w) / sigma_w) ** 2
        - 0.5 * ((y - mu_y) / sigma_y) ** 2
        - np.log(2 * np.pi * sigma_w * sigma_y)
    )


def analytic_score_wb(W, b, mu_w, sigma_w, mu_y, sigma_y):
    """(d/dW, d/db) of ``log_density_wb``."""
    _check_hyper(W, sigma_w, sigma_y)
    W = np.asarray(W, dtype=float)
    b = np.asarray(b, dtype=float)
    u = b / W + mu_y
    d_w = -1.0 / W - (W - mu_w) / sigma_w**2 + b * u / (sigma_y**2 * W**2)
    d_b = -u / (sigma_y**2 * W)
    return d_w, d_b
