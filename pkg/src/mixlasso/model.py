"""Finite mixtures of multivariate Gaussian regressions: domain types,
density and likelihood evaluation, parameter-space bounds, model dimension,
and dataset/parameter I/O.

Responses are modeled as y | x ~ sum_r pi_r N(beta_r^T x, diag(sigma2_r)),
with beta_r a p x q coefficient matrix and a diagonal covariance per
component.  Relevant-variable sets J are sets of 1-based coordinate pairs
(j, z), j in 1..p (predictor), z in 1..q (response).
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Dataset",
    "MixtureParams",
    "ModelIndex",
    "BoundsBox",
    "log_density",
    "log_density_rows",
    "log_likelihood",
    "restrict_to_J",
    "project_to_bounds",
    "dimension",
    "support_mask",
    "dataset_to_csv",
    "dataset_from_csv",
    "params_to_json",
    "params_from_json",
]

_LOG_2PI = math.log(2.0 * math.pi)


def _as_readonly(a, dtype=float):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Fixed design X (n x p) and responses Y (n x q)."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = _as_readonly(self.X)
        Y = _as_readonly(self.Y)
        if X.ndim != 2 or Y.ndim != 2:
            raise ValueError("X and Y must be 2-d arrays")
        if X.shape[0] != Y.shape[0]:
            raise ValueError(
                f"X has {X.shape[0]} rows but Y has {Y.shape[0]}"
            )
        if X.shape[0] < 1 or X.shape[1] < 1 or Y.shape[1] < 1:
            raise ValueError("n, p and q must all be >= 1")
        if not (np.isfinite(X).all() and np.isfinite(Y).all()):
            raise ValueError("dataset entries must be finite")
        if X.min() < 0.0 or X.max() > 1.0:
            # Covariates are expected in [0,1]^p by convention; the caller
            # owns rescaling, so this is a warning, not an error.
            warnings.warn(
                "design entries fall outside [0, 1]; covariates are not rescaled",
                stacklevel=2,
            )
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Y.shape[1]


@dataclass(frozen=True, eq=False)
class MixtureParams:
    """Mixture parameters: proportions pi (k,), regression coefficients
    beta (k, p, q) and diagonal variances sigma2 (k, q)."""

    pi: np.ndarray
    beta: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        pi = _as_readonly(self.pi)
        beta = _as_readonly(self.beta)
        sigma2 = _as_readonly(self.sigma2)
        if pi.ndim != 1 or beta.ndim != 3 or sigma2.ndim != 2:
            raise ValueError("pi must be (k,), beta (k,p,q), sigma2 (k,q)")
        k = pi.shape[0]
        if beta.shape[0] != k or sigma2.shape[0] != k:
            raise ValueError("component counts of pi, beta, sigma2 disagree")
        if beta.shape[2] != sigma2.shape[1]:
            raise ValueError("beta and sigma2 disagree on q")
        if not (np.isfinite(pi).all() and np.isfinite(beta).all() and np.isfinite(sigma2).all()):
            raise ValueError("parameters must be finite")
        if (pi <= 0).any():
            raise ValueError("mixture proportions must be positive")
        if abs(float(pi.sum()) - 1.0) > 1e-12:
            raise ValueError("mixture proportions must sum to 1 within 1e-12")
        if (sigma2 <= 0).any():
            raise ValueError("variances must be positive")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "sigma2", sigma2)

    @property
    def k(self) -> int:
        return self.pi.shape[0]

    @property
    def p(self) -> int:
        return self.beta.shape[1]

    @property
    def q(self) -> int:
        return self.beta.shape[2]


@dataclass(frozen=True)
class ModelIndex:
    """A pair (k, J): component count and relevant-coordinate set.

    J holds 1-based (j, z) pairs, 1 <= j <= p and 1 <= z <= q.  Bounds are
    checked against (p, q) when a mask is built, not at construction (the
    index itself does not know p and q).
    """

    k: int
    J: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        J = frozenset((int(j), int(z)) for (j, z) in self.J)
        for j, z in J:
            if j < 1 or z < 1:
                raise ValueError(f"coordinates are 1-based, got ({j}, {z})")
        object.__setattr__(self, "J", J)

    def sorted_J(self) -> list[tuple[int, int]]:
        return sorted(self.J)


@dataclass(frozen=True)
class BoundsBox:
    """Restricted parameter set: |beta| <= A_beta and sigma2 in
    [a_sigma2, A_sigma2], plus the selection constants tau and rho."""

    A_beta: float = 50.0
    a_sigma2: float = 1e-4
    A_sigma2: float = 25.0
    tau: float = 1.0
    rho: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.a_sigma2 < self.A_sigma2):
            raise ValueError("need 0 < a_sigma2 < A_sigma2")
        if self.A_beta <= 0:
            raise ValueError("A_beta must be positive")
        if not (0.0 < self.rho < 1.0):
            raise ValueError("rho must lie in (0, 1)")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


def support_mask(J, p: int, q: int) -> np.ndarray:
    """Boolean (p, q) mask of the 1-based coordinate set J."""
    mask = np.zeros((p, q), dtype=bool)
    for j, z in J:
        if not (1 <= j <= p and 1 <= z <= q):
            raise ValueError(f"coordinate ({j}, {z}) outside 1..{p} x 1..{q}")
        mask[j - 1, z - 1] = True
    return mask


def component_log_densities(params: MixtureParams, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Per-row, per-component log(pi_r * phi(y_i | beta_r^T x_i, sigma2_r)),
    shape (n, k).

    Reductions run along fixed-length axes only, so the value for a row does
    not depend on how many other rows are evaluated in the same call.
    """
    n = X.shape[0]
    k, _, q = params.beta.shape
    out = np.empty((n, k))
    log_pi = np.log(params.pi)
    for r in range(k):
        # mean (n, q) without BLAS so single-row and batched calls agree bitwise
        mean = np.sum(X[:, :, None] * params.beta[r][None, :, :], axis=1)
        diff = Y - mean
        s2 = params.sigma2[r]
        quad = np.sum(diff * diff / s2, axis=1)
        out[:, r] = log_pi[r] - 0.5 * (q * _LOG_2PI + np.sum(np.log(s2)) + quad)
    return out


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = np.max(a, axis=1)
    with np.errstate(invalid="ignore"):
        out = m + np.log(np.sum(np.exp(a - m[:, None]), axis=1))
    return np.where(np.isneginf(m), -np.inf, out)


def log_density_rows(params: MixtureParams, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """log s_xi(y_i | x_i) for each row, shape (n,)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ValueError("X and Y must be 2-d with equal row counts")
    if X.shape[1] != params.p or Y.shape[1] != params.q:
        raise ValueError(
            f"dimension mismatch: params expect p={params.p}, q={params.q}, "
            f"got p={X.shape[1]}, q={Y.shape[1]}"
        )
    return _logsumexp_rows(component_log_densities(params, X, Y))


def log_density(params: MixtureParams, x, y) -> float:
    """Mixture conditional log-density log s_xi(y | x) via log-sum-exp."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    return float(log_density_rows(params, x[None, :], y[None, :])[0])


def log_likelihood(params: MixtureParams, data: Dataset) -> float:
    """Sum over rows of log s_xi(y_i | x_i), accumulated in row order."""
    vals = log_density_rows(params, data.X, data.Y)
    total = 0.0
    for v in vals.tolist():
        total += v
    return total


def restrict_to_J(params: MixtureParams, J) -> MixtureParams:
    """Zero every beta entry outside the coordinate set J."""
    mask = support_mask(J, params.p, params.q)
    beta = np.where(mask[None, :, :], params.beta, 0.0)
    return MixtureParams(pi=params.pi, beta=beta, sigma2=params.sigma2)


def project_to_bounds(params: MixtureParams, bounds: BoundsBox) -> MixtureParams:
    """Clamp beta into [-A_beta, A_beta] and sigma2 into [a_sigma2, A_sigma2]."""
    beta = np.clip(params.beta, -bounds.A_beta, bounds.A_beta)
    sigma2 = np.clip(params.sigma2, bounds.a_sigma2, bounds.A_sigma2)
    return MixtureParams(pi=params.pi, beta=beta, sigma2=sigma2)


def dimension(k: int, J_size: int, q: int) -> int:
    """Model dimension k(|J| + q + 1) - 1.

    Two alternates appear in the source material (k(1+|J|) and
    k-1+|J|k+kq^2); this canonical form is the one entering the penalty.
    """
    if k < 1 or J_size < 0 or q < 1:
        raise ValueError("need k >= 1, J_size >= 0, q >= 1")
    return k * (J_size + q + 1) - 1


# ---------------------------------------------------------------------------
# I/O: dataset CSV and parameter JSON


def dataset_to_csv(data: Dataset, path) -> None:
    """CSV with header x1..xp,y1..yq and round-trip float formatting."""
    header = [f"x{j}" for j in range(1, data.p + 1)] + [
        f"y{z}" for z in range(1, data.q + 1)
    ]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n):
            w.writerow([repr(v) for v in data.X[i].tolist()] +
                       [repr(v) for v in data.Y[i].tolist()])


class DatasetFormatError(ValueError):
    """Malformed dataset CSV; message carries the offending line number."""


def dataset_from_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError("line 1: empty file") from None
        p = sum(1 for c in header if c.startswith("x"))
        q = sum(1 for c in header if c.startswith("y"))
        expected = [f"x{j}" for j in range(1, p + 1)] + [f"y{z}" for z in range(1, q + 1)]
        if p < 1 or q < 1 or header != expected:
            raise DatasetFormatError(
                "line 1: header must be x1..xp,y1..yq, got " + ",".join(header)
            )
        xs, ys = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != p + q:
                raise DatasetFormatError(
                    f"line {lineno}: expected {p + q} fields, got {len(row)}"
                )
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise DatasetFormatError(f"line {lineno}: {exc}") from None
            xs.append(vals[:p])
            ys.append(vals[p:])
    if not xs:
        raise DatasetFormatError("line 2: no data rows")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return Dataset(X=np.array(xs), Y=np.array(ys))


def params_to_json(params: MixtureParams) -> dict:
    """JSON dict {k, pi, beta, sigma2}; each beta_r flattened row-major."""
    return {
        "k": params.k,
        "pi": params.pi.tolist(),
        "beta": [params.beta[r].reshape(-1).tolist() for r in range(params.k)],
        "sigma2": params.sigma2.tolist(),
    }


def params_from_json(obj: dict) -> MixtureParams:
    k = int(obj["k"])
    pi = np.array(obj["pi"], dtype=float)
    sigma2 = np.array(obj["sigma2"], dtype=float)
    q = sigma2.shape[1]
    raw = [np.array(b, dtype=float) for b in obj["beta"]]
    beta = np.stack([b.reshape(-1, q) for b in raw])
    if len(pi) != k or len(raw) != k:
        raise ValueError("component count mismatch in params JSON")
    return MixtureParams(pi=pi, beta=beta, sigma2=sigma2)


def save_params(params: MixtureParams, path) -> None:
    with open(path, "w") as fh:
        json.dump(params_to_json(params), fh, indent=2)
        fh.write("\n")


def load_params(path) -> MixtureParams:
    with open(path) as fh:
        return params_from_json(json.load(fh))
