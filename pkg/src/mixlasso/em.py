"""Constrained maximum-likelihood EM on a fixed model (k, J).

The M-step solves responsibility-weighted least squares restricted to the
coordinates in J (everything else pinned at zero), updates the diagonal
variances from weighted residuals, and projects into the bounds box.  The
fit is restarted from several seeded initializations and the best final
log-likelihood wins.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .model import (
    BoundsBox,
    Dataset,
    MixtureParams,
    ModelIndex,
    component_log_densities,
    _logsumexp_rows,
    support_mask,
)
from .seeds import derive_rng

__all__ = [
    "EMConfig",
    "FittedModel",
    "e_step",
    "m_step_restricted",
    "fit_mle",
    "em_iterate",
    "initial_responsibilities",
]

RIDGE_JITTER = 1e-8


@dataclass(frozen=True)
class EMConfig:
    max_iter: int = 500
    tol: float = 1e-6
    n_starts: int = 5
    seed: int = 0
    resp_floor: float = 1e-15

    def __post_init__(self):
        if self.max_iter < 1 or self.n_starts < 1:
            raise ValueError("max_iter and n_starts must be >= 1")
        if self.tol <= 0 or self.resp_floor <= 0:
            raise ValueError("tol and resp_floor must be positive")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")


@dataclass(frozen=True, eq=False)
class FittedModel:
    """A fitted model: index, parameters, achieved log-likelihood and
    convergence metadata."""

    index: ModelIndex
    params: MixtureParams
    loglik: float
    n_iter: int
    converged: bool
    n_ridge_jitters: int = 0
    eta: float = float("nan")


def _row_logliks(params: MixtureParams, data: Dataset) -> np.ndarray:
    return _logsumexp_rows(component_log_densities(params, data.X, data.Y))


def _responsibilities(params, data, resp_floor):
    cl = component_log_densities(params, data.X, data.Y)
    norm = _logsumexp_rows(cl)
    resp = np.exp(cl - norm[:, None])
    resp = np.maximum(resp, resp_floor)
    resp /= resp.sum(axis=1, keepdims=True)
    return resp, norm


def e_step(params: MixtureParams, data: Dataset, resp_floor: float = 1e-15) -> np.ndarray:
    """Posterior component probabilities, shape (n, k); rows sum to 1.

    Computed in log space; entries are floored at resp_floor and the rows
    renormalized, so underflow never produces an exactly-zero column.
    """
    resp, _ = _responsibilities(params, data, resp_floor)
    return resp


def _columns_by_response(J, p, q):
    """0-based predictor index lists per response coordinate."""
    cols = [[] for _ in range(q)]
    for j, z in sorted(J):
        if not (1 <= j <= p and 1 <= z <= q):
            raise ValueError(f"coordinate ({j}, {z}) outside 1..{p} x 1..{q}")
        cols[z - 1].append(j - 1)
    return cols


def _box_quadratic_min(G, b, box, starts):
    """Minimize 0.5 b'Gb - b.x over the box [-box, box]^m by projected
    cyclic coordinate descent from each start; best endpoint wins.

    Each coordinate update is the exact 1-d constrained minimizer, so the
    objective never increases along the way; in particular the result is
    never worse than any feasible start.
    """
    m = len(b)
    best_f, best = None, None
    for start in starts:
        beta = np.clip(np.asarray(start, dtype=float).copy(), -box, box)
        for _ in range(500):
            delta = 0.0
            for a in range(m):
                gaa = G[a, a]
                if gaa <= 0.0:
                    new = 0.0
                else:
                    r = b[a] - (G[a] @ beta - gaa * beta[a])
                    new = min(max(r / gaa, -box), box)
                delta = max(delta, abs(new - beta[a]))
                beta[a] = new
            if delta < 1e-10 * max(1.0, np.abs(beta).max()):
                break
        f = 0.5 * beta @ G @ beta - b @ beta
        if best_f is None or f < best_f:
            best_f, best = f, beta
    return best


def m_step_restricted(
    resp: np.ndarray,
    data: Dataset,
    J,
    bounds: BoundsBox,
    events: dict | None = None,
    prev_params: MixtureParams | None = None,
) -> MixtureParams:
    """Weighted-least-squares M-step restricted to the support J.

    pi_r is the mean responsibility; per component and response coordinate
    the coefficients on J solve the weighted normal equations (a 1e-8 ridge
    is added when the restricted Gram matrix is not positive definite, and
    counted in `events`).  When the unconstrained solution leaves the
    coefficient box, the box-constrained problem is solved instead (naive
    clipping can undo cancelling collinear coefficients and crash the
    likelihood); `prev_params`, when given, seeds that solve so the fit
    never falls below the previous iterate.  Variances are weighted mean
    squared residuals clamped into [a_sigma2, A_sigma2], which is the
    box-constrained maximizer.
    """
    resp = np.asarray(resp, dtype=float)
    n, k = resp.shape
    p, q = data.p, data.q
    cols = _columns_by_response(J, p, q)
    pi = resp.mean(axis=0)
    pi = pi / pi.sum()
    beta = np.zeros((k, p, q))
    sigma2 = np.empty((k, q))
    jitters = 0
    beta_clamped = False
    for r in range(k):
        w = resp[:, r]
        wsum = w.sum()
        for z in range(q):
            yz = data.Y[:, z]
            idx = cols[z]
            if idx:
                Xa = data.X[:, idx]
                Xw = Xa * w[:, None]
                G = Xa.T @ Xw
                b = Xw.T @ yz
                try:
                    coef = cho_solve(cho_factor(G), b)
                except LinAlgError:
                    jitters += 1
                    G = G + RIDGE_JITTER * np.eye(len(idx))
                    coef = np.linalg.solve(G, b)
                if np.abs(coef).max() > bounds.A_beta:
                    beta_clamped = True
                    starts = [coef]
                    if prev_params is not None:
                        starts.append(prev_params.beta[r, idx, z])
                    coef = _box_quadratic_min(G, b, bounds.A_beta, starts)
                beta[r, idx, z] = coef
                res = yz - Xa @ coef
            else:
                res = yz
            sigma2[r, z] = float(w @ (res * res) / wsum)
    if events is not None:
        events["ridge_jitters"] = events.get("ridge_jitters", 0) + jitters
    clipped_s2 = np.clip(sigma2, bounds.a_sigma2, bounds.A_sigma2)
    if events is not None:
        events["clamped"] = bool(beta_clamped or (clipped_s2 != sigma2).any())
    return MixtureParams(pi=pi, beta=beta, sigma2=clipped_s2)


def _pooled_residuals(data: Dataset) -> np.ndarray:
    coef, *_ = np.linalg.lstsq(data.X, data.Y, rcond=None)
    return data.Y - data.X @ coef


def _one_hot(assign, n, k):
    resp = np.zeros((n, k))
    resp[np.arange(n), assign] = 1.0
    return resp


def initial_responsibilities(data: Dataset, k: int, rng, kind: str = "kmeans") -> np.ndarray:
    """Hard initial responsibilities.

    "kmeans": k-means++-style seeding and nearest-center assignment on the
    residuals of a pooled least-squares fit.  "random": uniform multinomial
    assignment.  Empty components are refilled from the largest one.
    """
    n = data.n
    if k == 1:
        return np.ones((n, 1))
    if kind == "kmeans":
        resid = _pooled_residuals(data)
        centers = [resid[rng.integers(n)]]
        d2 = np.sum((resid - centers[0]) ** 2, axis=1)
        for _ in range(k - 1):
            total = d2.sum()
            if total > 0:
                nxt = rng.choice(n, p=d2 / total)
            else:
                nxt = rng.integers(n)
            centers.append(resid[nxt])
            d2 = np.minimum(d2, np.sum((resid - centers[-1]) ** 2, axis=1))
        dists = np.stack(
            [np.sum((resid - c) ** 2, axis=1) for c in centers], axis=1
        )
        assign = np.argmin(dists, axis=1)
    elif kind == "random":
        assign = rng.integers(0, k, size=n)
    else:
        raise ValueError(f"unknown initialization kind: {kind!r}")
    counts = np.bincount(assign, minlength=k)
    for r in np.where(counts == 0)[0]:
        donor = int(np.argmax(counts))
        rows = np.where(assign == donor)[0]
        moved = rows[rng.integers(len(rows))]
        assign[moved] = r
        counts = np.bincount(assign, minlength=k)
    return _one_hot(assign, n, k)


def _rescue_responsibilities(resp, row_ll, k, n, resp_floor):
    """Reassign the worst-fit observations to near-empty components."""
    deficient = np.where(resp.mean(axis=0) < 1.0 / (10.0 * n))[0]
    if deficient.size == 0:
        return None
    out = resp.copy()
    order = np.argsort(row_ll)
    take = max(1, n // (2 * k))
    pos = 0
    for r in deficient:
        rows = order[pos : pos + take]
        pos += take
        out[rows, :] = resp_floor
        out[rows, r] = 1.0
    out /= out.sum(axis=1, keepdims=True)
    return out


def em_iterate(
    data: Dataset,
    index: ModelIndex,
    config: EMConfig,
    bounds: BoundsBox,
    resp0: np.ndarray | None = None,
    init_params: MixtureParams | None = None,
):
    """One EM run.  Returns (params, history, converged, n_ridge_jitters)
    where history is a list of (loglik, clamped) pairs, one entry per
    parameter state (so len(history) - 1 EM iterations were taken)."""
    from .model import project_to_bounds, restrict_to_J

    n = data.n
    events: dict = {}
    if init_params is not None:
        params = project_to_bounds(restrict_to_J(init_params, index.J), bounds)
    else:
        if resp0 is None:
            raise ValueError("need resp0 or init_params")
        params = m_step_restricted(resp0, data, index.J, bounds, events=events)
    ll = float(_row_logliks(params, data).sum())
    history = [(ll, events.get("clamped", False))]
    converged = False
    for _ in range(config.max_iter):
        resp, row_ll = _responsibilities(params, data, config.resp_floor)
        events["clamped"] = False
        params_new = m_step_restricted(
            resp, data, index.J, bounds, events=events, prev_params=params
        )
        ll_new = float(_row_logliks(params_new, data).sum())
        rescued = _rescue_responsibilities(resp, row_ll, index.k, n, config.resp_floor)
        if rescued is not None:
            ev2: dict = {}
            cand = m_step_restricted(rescued, data, index.J, bounds, events=ev2)
            ll_cand = float(_row_logliks(cand, data).sum())
            # adopt the reinitialized component only when it does not hurt
            if ll_cand >= ll_new:
                params_new, ll_new = cand, ll_cand
                events["clamped"] = ev2.get("clamped", False)
                events["ridge_jitters"] = events.get("ridge_jitters", 0) + ev2.get(
                    "ridge_jitters", 0
                )
        history.append((ll_new, events.get("clamped", False)))
        done = abs(ll_new - ll) / (1.0 + abs(ll)) < config.tol
        params, ll = params_new, ll_new
        if done:
            converged = True
            break
    return params, history, converged, events.get("ridge_jitters", 0)


def fit_mle(
    data: Dataset,
    index: ModelIndex,
    config: EMConfig,
    bounds: BoundsBox,
    init_params: MixtureParams | None = None,
) -> FittedModel:
    """Constrained MLE of the model (k, J) by multi-start EM.

    Start 0 uses a k-means++-style assignment on pooled-fit residuals and
    the remaining n_starts - 1 starts use random assignments; each start
    draws from an RNG stream derived from config.seed by its start index.
    When init_params is given a single run starts from those parameters.
    """
    if index.k > data.n:
        raise ValueError(f"k={index.k} exceeds the number of observations n={data.n}")
    support_mask(index.J, data.p, data.q)  # validates coordinates
    best = None
    if init_params is not None:
        runs = [(None, init_params)]
    else:
        runs = []
        for s in range(config.n_starts):
            rng = derive_rng(config.seed, s)
            kind = "kmeans" if s == 0 else "random"
            runs.append((initial_responsibilities(data, index.k, rng, kind), None))
    for resp0, start_params in runs:
        params, history, converged, jitters = em_iterate(
            data, index, config, bounds, resp0=resp0, init_params=start_params
        )
        ll = history[-1][0]
        if best is None or ll > best[1]:
            best = (params, ll, len(history) - 1, converged, jitters)
    params, ll, n_iter, converged, jitters = best
    return FittedModel(
        index=index,
        params=params,
        loglik=ll,
        n_iter=n_iter,
        converged=converged,
        n_ridge_jitters=jitters,
        eta=data.n * config.tol * abs(ll),
    )


# ---------------------------------------------------------------------------
# JSON


def fitted_to_json(fit: FittedModel) -> dict:
    from .model import params_to_json

    return {
        "index": {"k": fit.index.k, "J": [list(c) for c in fit.index.sorted_J()]},
        "params": params_to_json(fit.params),
        "loglik": fit.loglik,
        "n_iter": fit.n_iter,
        "converged": fit.converged,
    }


def fitted_from_json(obj: dict) -> FittedModel:
    from .model import params_from_json

    index = ModelIndex(
        k=int(obj["index"]["k"]),
        J=frozenset((int(j), int(z)) for j, z in obj["index"]["J"]),
    )
    return FittedModel(
        index=index,
        params=params_from_json(obj["params"]),
        loglik=float(obj["loglik"]),
        n_iter=int(obj["n_iter"]),
        converged=bool(obj["converged"]),
    )


def save_fitted(fit: FittedModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(fitted_to_json(fit), fh, indent=2)
        fh.write("\n")


def load_fitted(path) -> FittedModel:
    with open(path) as fh:
        return fitted_from_json(json.load(fh))
