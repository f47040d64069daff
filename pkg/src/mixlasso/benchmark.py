"""Two-component benchmark on a design that violates the restricted
eigenvalue condition: near-collinear leading columns, +/-magnitude
coefficients on the first two predictors, tiny noise.

Each replication runs the full two-stage pipeline (penalized supports,
constrained MLE refit, slope-heuristic choice) and the no-refit baseline
(the penalized fits themselves as the collection), then scores both
against the generating density with a Monte-Carlo tensorized KL over
freshly resampled design rows.  Both procedures share the evaluation
draws, so per-replication comparisons are paired.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .divergences import CondDensity, MCConfig, kl_tensorized
from .em import EMConfig, FittedModel, _row_logliks, fit_mle
from .lasso import PenalizedFit, collection_from_path, penalized_path
from .model import BoundsBox, Dataset, MixtureParams, ModelIndex, dimension
from .seeds import derive_seed
from .selection import SelectionReport, slope_heuristic

__all__ = [
    "BenchConfig",
    "RepRecord",
    "BenchResult",
    "giraud_design",
    "generate",
    "run_lasso_mle",
    "run_lasso_only",
    "run_benchmark",
    "default_bench_bounds",
]


@dataclass(frozen=True)
class BenchConfig:
    n: int = 20
    p: int = 10
    q: int = 10
    k_true: int = 2
    beta_magnitude: float = 10.0
    noise_var: float = 0.01
    n_replications: int = 20
    n_eval: int = 5000
    K: tuple = (1, 2, 3)
    grid_size: int = 10
    seed: int = 0

    def __post_init__(self):
        if min(self.n, self.p, self.q, self.k_true, self.n_replications,
               self.n_eval, self.grid_size) < 1:
            raise ValueError("all size fields must be positive")
        if self.beta_magnitude <= 0 or self.noise_var <= 0:
            raise ValueError("beta_magnitude and noise_var must be positive")
        if not self.K:
            raise ValueError("K must be nonempty")
        object.__setattr__(self, "K", tuple(sorted(set(int(k) for k in self.K))))


def default_bench_bounds() -> BoundsBox:
    """Wide enough that the generating parameters are never clamped."""
    return BoundsBox(A_beta=50.0, a_sigma2=1e-4, A_sigma2=25.0, tau=1.0, rho=0.5)


def giraud_design(n: int, p: int) -> np.ndarray:
    """The n x p design whose first two columns are nearly collinear unit
    vectors (inner product about -0.99999988 at n=20), third column mixes
    them with a small tail, and the rest are canonical basis vectors."""
    if p > n:
        raise ValueError(f"p={p} canonical columns unavailable with n={n} rows")
    if n < 4 or p < 4:
        raise ValueError("the design needs n >= 4 and p >= 4")
    X = np.zeros((n, p))
    X[0, 0], X[1, 0] = 1.0, -1.0
    X[:, 0] /= math.sqrt(2.0)
    X[0, 1], X[1, 1] = -1.0, 1.001
    X[:, 1] /= math.sqrt(1.0 + 1.001**2)
    X[0, 2] = X[1, 2] = 1.0 / math.sqrt(2.0)
    X[2:, 2] = 1.0 / n
    X[:, 2] /= math.sqrt(1.0 + (n - 2) / n**2)
    for j in range(3, p):
        X[j, j] = 1.0
    return X


def true_params(config: BenchConfig) -> MixtureParams:
    beta = np.zeros((2, config.p, config.q))
    beta[0, :2, :] = config.beta_magnitude
    beta[1, :2, :] = -config.beta_magnitude
    sigma2 = np.full((2, config.q), config.noise_var)
    return MixtureParams(pi=[0.5, 0.5], beta=beta, sigma2=sigma2)


def generate(config: BenchConfig, rep_seed: int):
    """One replication draw: the fixed design, labels uniform over the two
    components, responses beta_label^T x + N(0, noise_var I).  Returns
    (dataset, generating parameters, component labels)."""
    if config.k_true != 2:
        raise ValueError("the generator defines exactly two components")
    rng = np.random.default_rng(rep_seed)
    X = giraud_design(config.n, config.p)
    truth = true_params(config)
    labels = rng.integers(0, 2, size=config.n)
    means = np.einsum("ip,ipq->iq", X, truth.beta[labels])
    Y = means + rng.standard_normal((config.n, config.q)) * math.sqrt(config.noise_var)
    with warnings.catch_warnings():
        # the design intentionally leaves [0,1]^p; keep the generator quiet
        warnings.simplefilter("ignore")
        data = Dataset(X=X, Y=Y)
    return data, truth, labels


def _eval_design(config: BenchConfig, seed: int) -> np.ndarray:
    rng = np.random.default_rng(derive_seed(seed, 3))
    fresh = giraud_design(config.n, config.p)
    idx = rng.integers(0, config.n, size=config.n_eval)
    return fresh[idx]


def _eval_kl(truth: MixtureParams, fitted: MixtureParams, config: BenchConfig,
             seed: int) -> float:
    design = _eval_design(config, seed)
    mc = MCConfig(n_samples=1, seed=derive_seed(seed, 4))
    s = CondDensity.from_mixture(truth, tag="truth")
    t = CondDensity.from_mixture(fitted, tag="fitted")
    return kl_tensorized(s, t, design, mc).value


def _stage_em_config(seed: int) -> EMConfig:
    return EMConfig(max_iter=300, tol=1e-6, n_starts=3, seed=seed)


def _identifiable(k: int, J_size: int, data: Dataset) -> bool:
    # more free parameters than response scalars means the constrained MLE
    # interpolates (variances pinned at the floor) and both the refit and
    # the slope calibration lose meaning; such models are dropped
    return dimension(k, J_size, data.q) < data.n * data.q


def mle_pipeline(data: Dataset, config: BenchConfig, bounds: BoundsBox, seed: int):
    """Stage 1 + 2 + 3: harvest supports, refit every identifiable (k, J)
    by constrained EM, select by the slope heuristic.  Returns
    (fits, report)."""
    em_cfg = _stage_em_config(derive_seed(seed, 1))
    path = penalized_path(data, config.K, em_cfg, bounds, config.grid_size)
    models = [
        m for m in collection_from_path(path, config.K)
        if _identifiable(m.k, len(m.J), data)
    ]
    fits = []
    for i, m in enumerate(models):
        cfg = _stage_em_config(derive_seed(seed, 2, i))
        fits.append(fit_mle(data, m, cfg, bounds))
    report = slope_heuristic(fits, data.n)
    return fits, report


def run_lasso_mle(data: Dataset, truth: MixtureParams, config: BenchConfig,
                  bounds: BoundsBox, seed: int):
    """Full procedure on one dataset; returns (chosen fit, KL to truth)."""
    fits, report = mle_pipeline(data, config, bounds, seed)
    pos = next(i for i, r in enumerate(report.records) if r.chosen)
    chosen = fits[pos]
    return chosen, _eval_kl(truth, chosen.params, config, seed)


def lasso_only_pipeline(data: Dataset, config: BenchConfig, bounds: BoundsBox,
                        seed: int):
    """The no-refit baseline: the penalized fits themselves form the
    collection (dimension taken from each fit's extracted support) and the
    slope heuristic picks one.  Returns (penalized fits, wrapped fits,
    report)."""
    em_cfg = _stage_em_config(derive_seed(seed, 1))
    path = penalized_path(data, config.K, em_cfg, bounds, config.grid_size)
    flat: list[PenalizedFit] = [
        fit for k in sorted(path) for fit in path[k]
        if _identifiable(fit.k, len(fit.J), data)
    ]
    wrapped = [
        FittedModel(
            index=ModelIndex(k=pf.k, J=pf.J),
            params=pf.params,
            loglik=float(_row_logliks(pf.params, data).sum()),
            n_iter=pf.n_iter,
            converged=pf.converged,
        )
        for pf in flat
    ]
    report = slope_heuristic(wrapped, data.n)
    return flat, wrapped, report


def run_lasso_only(data: Dataset, truth: MixtureParams, config: BenchConfig,
                   bounds: BoundsBox, seed: int):
    """Baseline procedure on one dataset; returns (chosen penalized fit,
    KL to truth).  Shares the evaluation draws with run_lasso_mle."""
    flat, _, report = lasso_only_pipeline(data, config, bounds, seed)
    pos = next(i for i, r in enumerate(report.records) if r.chosen)
    chosen = flat[pos]
    return chosen, _eval_kl(truth, chosen.params, config, seed)


@dataclass(frozen=True)
class RepRecord:
    seed: int
    kl_lasso_mle: float
    kl_lasso_only: float
    k_hat_mle: int
    J_size_mle: int
    k_hat_lasso: int
    J_size_lasso: int


@dataclass(frozen=True)
class BenchResult:
    records: tuple
    summary: dict


def _five_number(values) -> dict:
    v = np.asarray(values, dtype=float)
    return {
        "min": float(v.min()),
        "q1": float(np.percentile(v, 25)),
        "median": float(np.percentile(v, 50)),
        "q3": float(np.percentile(v, 75)),
        "max": float(v.max()),
    }


def _one_replication(config: BenchConfig, bounds: BoundsBox, i: int) -> RepRecord:
    rep_seed = derive_seed(config.seed, 1000 + i)
    try:
        data, truth, _ = generate(config, rep_seed)
        mle_fit, kl_mle = run_lasso_mle(data, truth, config, bounds, rep_seed)
        pf, kl_lasso = run_lasso_only(data, truth, config, bounds, rep_seed)
    except Exception as exc:
        raise RuntimeError(f"replication {i} (seed {rep_seed}) failed: {exc}") from exc
    return RepRecord(
        seed=rep_seed,
        kl_lasso_mle=kl_mle,
        kl_lasso_only=kl_lasso,
        k_hat_mle=mle_fit.index.k,
        J_size_mle=len(mle_fit.index.J),
        k_hat_lasso=pf.k,
        J_size_lasso=len(pf.J),
    )


def run_benchmark(config: BenchConfig, bounds: BoundsBox | None = None,
                  threads: int = 1) -> BenchResult:
    """n_replications independent (generate, both procedures) runs with
    seeds derived from the master seed; parallel and serial schedules
    produce identical results."""
    if bounds is None:
        bounds = default_bench_bounds()
    n_rep = config.n_replications
    if threads == 0:
        threads = None  # executor default
    if threads == 1:
        records = [_one_replication(config, bounds, i) for i in range(n_rep)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(
                pool.map(lambda i: _one_replication(config, bounds, i), range(n_rep))
            )
    summary = {
        "n_replications": n_rep,
        "kl_lasso_mle": _five_number([r.kl_lasso_mle for r in records]),
        "kl_lasso_only": _five_number([r.kl_lasso_only for r in records]),
    }
    return BenchResult(records=tuple(records), summary=summary)


CSV_HEADER = [
    "seed",
    "kl_lasso_mle",
    "kl_lasso_only",
    "k_hat_mle",
    "J_size_mle",
    "k_hat_lasso",
    "J_size_lasso",
]


def result_to_csv(result: BenchResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in result.records:
            w.writerow(
                [
                    r.seed,
                    repr(r.kl_lasso_mle),
                    repr(r.kl_lasso_only),
                    r.k_hat_mle,
                    r.J_size_mle,
                    r.k_hat_lasso,
                    r.J_size_lasso,
                ]
            )


def summary_to_json(result: BenchResult, path) -> None:
    with open(path, "w") as fh:
        json.dump(result.summary, fh, indent=2)
        fh.write("\n")


def boxplot_data(result: BenchResult) -> dict:
    """The five-number summaries a boxplot of the two KL columns displays."""
    return {
        "kl_lasso_mle": result.summary["kl_lasso_mle"],
        "kl_lasso_only": result.summary["kl_lasso_only"],
    }
