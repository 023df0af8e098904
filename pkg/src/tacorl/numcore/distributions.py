"""Diagonal Gaussians, tanh-squashed sampling and the discretized logistic mixture."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import tensor as T
from .tensor import ShapeError, Tensor

LOG_2PI = math.log(2.0 * math.pi)
LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
LOG_SCALE_MIN = -7.0
N_MIXTURES = 10


@dataclass
class GaussianParams:
    mean: Tensor
    log_std: Tensor

    def __post_init__(self):
        if self.mean.shape != self.log_std.shape:
            raise ShapeError(f"mean {self.mean.shape} and log_std {self.log_std.shape} differ")

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    def detach(self) -> GaussianParams:
        return GaussianParams(self.mean.detach(), self.log_std.detach())


def gaussian_from_head(out: Tensor) -> GaussianParams:
    """Split a (..., 2d) head output into mean and clamped log-std."""
    d = out.shape[-1] // 2
    mean, log_std = T.split_last(out, [d, d])
    return GaussianParams(mean, T.clip(log_std, LOG_STD_MIN, LOG_STD_MAX))


def gaussian_kl(q: GaussianParams, p: GaussianParams) -> Tensor:
    """KL(q || p) for diagonal Gaussians, summed over the last axis."""
    if q.dim != p.dim:
        raise ShapeError(f"KL dimension mismatch: {q.dim} vs {p.dim}")
    var_ratio = T.exp(2.0 * (q.log_std - p.log_std))
    diff = (q.mean - p.mean) * T.exp(-p.log_std)
    per_dim = (p.log_std - q.log_std) + 0.5 * (var_ratio + diff * diff) - 0.5
    return per_dim.sum(axis=-1)


def kl_balanced(q: GaussianParams, p: GaussianParams, alpha: float) -> Tensor:
    """KL(q || p) whose gradient reaches ``p`` scaled by alpha and ``q`` by 1 - alpha."""
    to_prior = gaussian_kl(q.detach(), p)
    to_post = gaussian_kl(q, p.detach())
    return T.blend_grad(to_prior, to_post, alpha)


def gaussian_logprob(params: GaussianParams, x) -> Tensor:
    z = (T.as_tensor(x) - params.mean) * T.exp(-params.log_std)
    return (-0.5 * z * z - params.log_std - 0.5 * LOG_2PI).sum(axis=-1)


def _log1m_tanh_sq(u: Tensor) -> Tensor:
    # log(1 - tanh(u)^2) = 2 * (log 2 - u - softplus(-2u))
    return 2.0 * (math.log(2.0) - u - T.softplus(-2.0 * u))


def gaussian_sample_tanh(params: GaussianParams, rng: np.random.Generator, eps: np.ndarray | None = None):
    """Reparameterized tanh-Gaussian sample and its log-density (with Jacobian term)."""
    if eps is None:
        eps = rng.standard_normal(params.mean.shape)
    u = params.mean + T.exp(params.log_std) * eps
    z = T.tanh(u)
    logp = (-0.5 * eps * eps - params.log_std - 0.5 * LOG_2PI - _log1m_tanh_sq(u)).sum(axis=-1)
    return z, logp, u


def tanh_gaussian_logprob(params: GaussianParams, z, clip_eps: float = 1e-6) -> Tensor:
    """Log-density of an already-squashed value under a tanh-Gaussian."""
    z = np.clip(np.asarray(z.data if isinstance(z, Tensor) else z), -1.0 + clip_eps, 1.0 - clip_eps)
    u = np.arctanh(z)
    ut = Tensor(u)
    return gaussian_logprob(params, ut) - _log1m_tanh_sq(ut).sum(axis=-1)


# --------------------------------------------------------- logistic mixture
@dataclass
class LogisticMixtureParams:
    """Per action dim: mixture logits, means and log-scales, shape (..., dims, K)."""

    logits: Tensor
    means: Tensor
    log_scales: Tensor

    def __post_init__(self):
        if not (self.logits.shape == self.means.shape == self.log_scales.shape):
            raise ShapeError("mixture parameter shapes differ")
        if self.logits.shape[-1] != N_MIXTURES:
            raise ShapeError(f"expected {N_MIXTURES} mixture components, got {self.logits.shape[-1]}")


def mixture_from_head(out: Tensor, dims: int) -> LogisticMixtureParams:
    """Reshape a (..., dims*3K) head output into mixture parameters."""
    lead = out.shape[:-1]
    k = N_MIXTURES
    x = out.reshape(lead + (dims, 3 * k))
    logits, means, log_scales = T.split_last(x, [k, k, k])
    return LogisticMixtureParams(logits, means, T.clip(log_scales, LOG_SCALE_MIN, None))


class BinSpec:
    """Uniform bins over [-1, 1]; the edge bins absorb the tails."""

    def __init__(self, n_bins: int = 256):
        if n_bins < 1:
            raise ValueError("need at least one bin")
        self.n_bins = n_bins
        self.width = 2.0 / n_bins
        self.edges = -1.0 + self.width * np.arange(n_bins + 1)
        self.centers = 0.5 * (self.edges[:-1] + self.edges[1:])
        self.clamped = 0  # count of out-of-range inputs seen

    def index(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        outside = (x < -1.0) | (x > 1.0)
        if outside.any():
            self.clamped += int(outside.sum())
        idx = np.floor((np.clip(x, -1.0, 1.0) + 1.0) / self.width).astype(np.int64)
        return np.clip(idx, 0, self.n_bins - 1)


def _bin_log_mass(means: Tensor, log_scales: Tensor, lo: np.ndarray, hi: np.ndarray) -> Tensor:
    """log P(lo < X <= hi) for logistic X; lo = -inf / hi = +inf mark open edges.

    Uses sigma(u) - sigma(l) = sigma(u) * sigma(-l) * (1 - exp(l - u)), which
    stays accurate in both tails.
    """
    inv_s = T.exp(-log_scales)
    lo_open = np.isneginf(lo)
    hi_open = np.isposinf(hi)
    lo_f = np.where(lo_open, 0.0, lo)
    hi_f = np.where(hi_open, 0.0, hi)
    u = (hi_f - means) * inv_s
    l = (lo_f - means) * inv_s
    term_u = T.where(hi_open, 0.0, T.log_sigmoid(u))
    term_l = T.where(lo_open, 0.0, T.log_sigmoid(-l))
    both = ~(lo_open | hi_open)
    width = np.where(both, hi_f - lo_f, 1.0)
    # l - u = -(hi - lo) / s; open edges get a dummy finite argument
    gap = T.where(both, -1.0 * (width * inv_s), -1.0)
    term_gap = T.where(both, T.log1mexp(gap), 0.0)
    return term_u + term_l + term_gap


def _bin_bounds(idx: np.ndarray, bins: BinSpec):
    lo = bins.edges[idx]
    hi = bins.edges[idx + 1]
    lo = np.where(idx == 0, -np.inf, lo)
    hi = np.where(idx == bins.n_bins - 1, np.inf, hi)
    return lo, hi


def logistic_mixture_logprob(params: LogisticMixtureParams, action, bins: BinSpec) -> Tensor:
    """Log-mass of the bin holding each action component, summed over dims.

    ``action`` has shape (..., dims); returns shape (...).
    """
    a = np.asarray(action.data if isinstance(action, Tensor) else action, dtype=np.float64)
    if a.shape != params.means.shape[:-1]:
        raise ShapeError(f"action shape {a.shape} does not match mixture {params.means.shape[:-1]}")
    idx = bins.index(a)[..., None]
    lo, hi = _bin_bounds(idx, bins)
    log_mass = _bin_log_mass(params.means, params.log_scales, lo, hi)
    log_w = T.log_softmax(params.logits, axis=-1)
    per_dim = T.logsumexp(log_w + log_mass, axis=-1)
    return per_dim.sum(axis=-1)


def logistic_mixture_bin_logmass(params: LogisticMixtureParams, bins: BinSpec) -> np.ndarray:
    """Log-mass of every bin per dim, shape (..., dims, n_bins); no gradient."""
    with T.no_grad():
        idx = np.arange(bins.n_bins)
        lo, hi = _bin_bounds(idx, bins)
        means = T.Tensor(params.means.data[..., None, :])
        log_scales = T.Tensor(params.log_scales.data[..., None, :])
        lm = _bin_log_mass(means, log_scales, lo[:, None], hi[:, None])
        log_w = T.log_softmax(T.Tensor(params.logits.data[..., None, :]), axis=-1)
        return T.logsumexp(log_w + lm, axis=-1).data


def logistic_mixture_mode(params: LogisticMixtureParams, bins: BinSpec) -> np.ndarray:
    """Center of the highest-mass bin per dim (greedy decode).

    Works in probability space via CDF differences at the bin edges; only
    the argmax is needed, so tail precision does not matter here.
    """
    w = np.exp(T.log_softmax(T.Tensor(params.logits.data), axis=-1).data)  # (..., dims, K)
    inv_s = np.exp(-params.log_scales.data)[..., None]
    inner = bins.edges[1:-1]
    cdf = expit((inner - params.means.data[..., None]) * inv_s)  # (..., dims, K, n_bins - 1)
    cdf = np.einsum("...k,...kb->...b", w, cdf)
    lead = cdf.shape[:-1]
    full = np.concatenate([np.zeros(lead + (1,)), cdf, np.ones(lead + (1,))], axis=-1)
    return bins.centers[np.argmax(np.diff(full, axis=-1), axis=-1)]


def logistic_mixture_sample(params: LogisticMixtureParams, bins: BinSpec, rng: np.random.Generator) -> np.ndarray:
    """Draw a component, then a logistic value, snapped to its bin center."""
    logits = params.logits.data
    g = rng.gumbel(size=logits.shape)
    k = np.argmax(logits + g, axis=-1)[..., None]
    mu = np.take_along_axis(params.means.data, k, axis=-1)[..., 0]
    s = np.exp(np.take_along_axis(params.log_scales.data, k, axis=-1)[..., 0])
    u = rng.uniform(1e-12, 1.0 - 1e-12, size=mu.shape)
    x = mu + s * (np.log(u) - np.log1p(-u))
    return bins.centers[bins.index(np.clip(x, -1.0, 1.0))]
