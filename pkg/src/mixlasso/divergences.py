"""Divergences between conditional densities over a fixed design:
tensorized Kullback-Leibler, Jensen-Kullback-Leibler and squared Hellinger,
with Monte-Carlo estimators and a closed-form Gaussian KL test oracle.

Estimates average the per-point divergence over the design rows, drawing
responses from the first argument; every estimator reports a (value,
standard_error, n_samples) triple.  Per-design-point RNG streams are
derived from the seed by the point index, so evaluation order (or a
parallel schedule) cannot change results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import MixtureParams, _logsumexp_rows
from .seeds import derive_rng

__all__ = [
    "CondDensity",
    "MCConfig",
    "MCEstimate",
    "kl_tensorized",
    "jkl_tensorized",
    "hellinger_sq_tensorized",
    "kl_gaussian_closed_form",
    "draw_log_pairs",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class CondDensity:
    """A conditional density: a log-density evaluator (x, Y) -> (m,) and,
    when available, a sampler (rng, x, m) -> (m, q) response draws."""

    logpdf: object
    sampler: object = None
    tag: str = ""

    @classmethod
    def from_mixture(cls, params: MixtureParams, tag: str = "") -> "CondDensity":
        beta = params.beta
        sigma2 = params.sigma2
        pi = params.pi
        k, _, q = beta.shape
        log_pi = np.log(pi)
        log_det = np.sum(np.log(sigma2), axis=1)  # (k,)

        def logpdf(x, Y):
            x = np.asarray(x, dtype=float).reshape(-1)
            Y = np.atleast_2d(np.asarray(Y, dtype=float))
            means = np.einsum("p,kpq->kq", x, beta)
            comp = np.empty((Y.shape[0], k))
            for r in range(k):
                diff = Y - means[r]
                quad = np.sum(diff * diff / sigma2[r], axis=1)
                comp[:, r] = log_pi[r] - 0.5 * (q * _LOG_2PI + log_det[r] + quad)
            return _logsumexp_rows(comp)

        def sampler(rng, x, m):
            x = np.asarray(x, dtype=float).reshape(-1)
            means = np.einsum("p,kpq->kq", x, beta)
            comps = rng.choice(k, size=m, p=pi)
            eps = rng.standard_normal((m, q))
            return means[comps] + eps * np.sqrt(sigma2[comps])

        return cls(logpdf=logpdf, sampler=sampler, tag=tag)


@dataclass(frozen=True)
class MCConfig:
    n_samples: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


@dataclass(frozen=True)
class MCEstimate:
    value: float
    standard_error: float
    n_samples: int

    def __float__(self):
        return self.value

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "standard_error": self.standard_error,
            "n_samples": self.n_samples,
        }


def draw_log_pairs(s: CondDensity, t: CondDensity, design, mc: MCConfig):
    """Draw mc.n_samples responses from s at every design row and evaluate
    both log-densities on the shared draws; returns (log_s, log_t), each of
    shape (n_design, n_samples)."""
    if s.sampler is None:
        raise ValueError("the first density must be samplable")
    X = np.atleast_2d(np.asarray(design, dtype=float))
    n = X.shape[0]
    M = mc.n_samples
    ls = np.empty((n, M))
    lt = np.empty((n, M))
    for i in range(n):
        rng = derive_rng(mc.seed, i)
        Y = s.sampler(rng, X[i], M)
        ls[i] = s.logpdf(X[i], Y)
        lt[i] = t.logpdf(X[i], Y)
    return ls, lt


def _estimate(samples: np.ndarray) -> MCEstimate:
    n, M = samples.shape
    value = float(samples.mean())
    if M >= 2:
        per_point_var = samples.var(axis=1, ddof=1)
        se = math.sqrt(float(per_point_var.sum()) / M) / n
    elif n >= 2:
        se = float(samples.std(ddof=1)) / math.sqrt(n)
    else:
        se = float("nan")
    return MCEstimate(value=value, standard_error=se, n_samples=n * M)


def kl_tensorized(s: CondDensity, t: CondDensity, design, mc: MCConfig) -> MCEstimate:
    """Monte-Carlo tensorized KL: mean over design rows and draws of
    log s - log t, responses drawn from s.  A draw where t has zero density
    makes the estimate +inf (flagged by a NaN standard error, not raised).
    """
    ls, lt = draw_log_pairs(s, t, design, mc)
    if np.isneginf(lt).any():
        return MCEstimate(value=float("inf"), standard_error=float("nan"),
                          n_samples=ls.size)
    return _estimate(ls - lt)


def jkl_integrand(ls: np.ndarray, lt: np.ndarray, rho: float) -> np.ndarray:
    """Per-sample -(1/rho) log((1-rho) + rho t/s); never exceeds
    -log(1-rho)/rho because logaddexp is at least its first argument."""
    return -(np.logaddexp(np.log(1.0 - rho), np.log(rho) + (lt - ls))) / rho


def jkl_tensorized(
    s: CondDensity, t: CondDensity, rho: float, design, mc: MCConfig
) -> MCEstimate:
    """Monte-Carlo tensorized Jensen-Kullback-Leibler divergence
    (1/rho) KL(s, (1-rho) s + rho t); the mixture is positive wherever s
    is, so the integrand is always finite."""
    if not (0.0 < rho < 1.0):
        raise ValueError("rho must lie in (0, 1)")
    ls, lt = draw_log_pairs(s, t, design, mc)
    return _estimate(jkl_integrand(ls, lt, rho))


def hellinger_sq_tensorized(
    s: CondDensity, t: CondDensity, design, mc: MCConfig
) -> MCEstimate:
    """Monte-Carlo tensorized squared Hellinger distance, in the
    (1/2) integral (sqrt s - sqrt t)^2 normalization: 1 - E_s sqrt(t/s)."""
    ls, lt = draw_log_pairs(s, t, design, mc)
    est = _estimate(np.exp(0.5 * (lt - ls)))
    return MCEstimate(
        value=1.0 - est.value, standard_error=est.standard_error,
        n_samples=est.n_samples,
    )


def kl_gaussian_closed_form(mu1: float, s1sq: float, mu2: float, s2sq: float) -> float:
    """KL(N(mu1, s1sq) || N(mu2, s2sq)) for scalar Gaussians."""
    if s1sq <= 0 or s2sq <= 0:
        raise ValueError("variances must be positive")
    return 0.5 * math.log(s2sq / s1sq) + (s1sq + (mu1 - mu2) ** 2) / (2.0 * s2sq) - 0.5
