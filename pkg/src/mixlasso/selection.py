"""Model selection: the theoretical penalty (complexity constants, Kraft
weights, model-count bounds), penalized criterion minimization with a
deterministic tie rule, and a slope-heuristic calibrator.

The theoretical penalty for a model of dimension D is
kappa * D * [B^2 - log((D/n) B^2 ^ 1) + (1 v tau) * log(4epq / ((D - q^2) ^ pq))]
with B the bracketing constant of the bounded parameter set.  kappa has no
usable closed form, so the slope heuristic is the practical default: fit
the linear trend of -loglik/n against D/n on the high-dimension half of
the collection and double it.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .em import FittedModel
from .model import BoundsBox, ModelIndex, dimension

__all__ = [
    "PenaltySpec",
    "ModelRecord",
    "SelectionReport",
    "constant_c",
    "constant_a",
    "constant_B",
    "complexity_bound",
    "kraft_weight",
    "kraft_sum_check",
    "count_models_upper",
    "theoretical_penalty",
    "select_penalized",
    "slope_heuristic",
]


def constant_c() -> float:
    """5(1 - 2^(-1/4))/8, the mean-net spacing constant."""
    return 5.0 * (1.0 - 2.0 ** (-0.25)) / 8.0


def constant_a() -> float:
    """sqrt(pi) + sqrt(log(sqrt(pi e) * 2^(5/4) * 8e / sqrt(c)))."""
    c = constant_c()
    inner = math.sqrt(math.pi * math.e) * 2.0 ** 1.25 * 8.0 * math.e / math.sqrt(c)
    return math.sqrt(math.pi) + math.sqrt(math.log(inner))


def constant_B(bounds: BoundsBox, q: int) -> float:
    """Bracketing-entropy constant
    sqrt(log q) + sqrt(log((A_beta/A_Sigma)(A_Sigma/a_Sigma + 1/2))) + a,
    with A_Sigma, a_Sigma the standard-deviation bounds."""
    if q < 1:
        raise ValueError("q must be >= 1")
    A_sigma = math.sqrt(bounds.A_sigma2)
    a_sigma = math.sqrt(bounds.a_sigma2)
    arg = (bounds.A_beta / A_sigma) * (A_sigma / a_sigma + 0.5)
    if arg <= 1.0:
        raise ValueError(
            "the bracketing log argument (A_beta/A_Sigma)(A_Sigma/a_Sigma + 1/2) "
            f"must exceed 1, got {arg}"
        )
    return math.sqrt(math.log(q)) + math.sqrt(math.log(arg)) + constant_a()


def complexity_bound(D: int, n: int, B: float) -> float:
    """(D/n) [2 B^2 + log(1 / ((D/n) B^2 ^ 1))]."""
    if D < 1 or n < 1 or B <= 0:
        raise ValueError("need D >= 1, n >= 1, B > 0")
    ratio = (D / n) * B * B
    return (D / n) * (2.0 * B * B + math.log(1.0 / min(ratio, 1.0)))


def _kraft_denominator(D: int, p: int, q: int) -> int:
    # for D <= q^2 the printed denominator is nonpositive; clamp at 1
    return max(min(D - q * q, p * q), 1)


def kraft_weight(D: int, p: int, q: int) -> float:
    """Model weight x = D log(4epq / ((D - q^2) ^ pq)), denominator clamped
    at 1 where the printed formula is undefined (D <= q^2)."""
    if D < 1 or p < 1 or q < 1:
        raise ValueError("need D >= 1, p >= 1, q >= 1")
    return D * math.log(4.0 * math.e * p * q / _kraft_denominator(D, p, q))


def count_models_upper(D: int, p: int, q: int) -> float:
    """Upper bound on the number of (k, J) pairs whose variance-inclusive
    dimension k(1 + |J| + q^2) - 1 equals D: 2^(pq) once pq <= D - q^2,
    (epq/(D-q^2))^(D-q^2) for q^2 < D, 1 at D = q^2 (k=1, empty J only)
    and 0 below (no models there)."""
    if D < 1 or p < 1 or q < 1:
        raise ValueError("need D >= 1, p >= 1, q >= 1")
    m = D - q * q
    if m < 0:
        return 0.0
    if m == 0:
        return 1.0
    if p * q <= m:
        return 2.0 ** (p * q)
    return (math.e * p * q / m) ** m


def kraft_sum_check(p: int, q: int, D_max: int) -> float:
    """Partial Kraft sum over dimensions 1..D_max with per-dimension
    multiplicities bounded by count_models_upper; the contract is <= 2."""
    total = 0.0
    for D in range(1, D_max + 1):
        total += count_models_upper(D, p, q) * math.exp(-kraft_weight(D, p, q))
    return total


@dataclass(frozen=True)
class PenaltySpec:
    kappa: float
    bounds: BoundsBox
    n: int
    p: int
    q: int

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if min(self.n, self.p, self.q) < 1:
            raise ValueError("n, p, q must be >= 1")


def theoretical_penalty(index: ModelIndex, spec: PenaltySpec) -> float:
    """kappa * D * [B^2 - log((D/n) B^2 ^ 1) + (1 v tau) log(4epq/...)],
    dimension and Kraft term sharing the clamped denominator."""
    D = dimension(index.k, len(index.J), spec.q)
    B = constant_B(spec.bounds, spec.q)
    ratio = (D / spec.n) * B * B
    tau_term = max(1.0, spec.bounds.tau) * kraft_weight(D, spec.p, spec.q)
    return spec.kappa * (D * (B * B - math.log(min(ratio, 1.0))) + tau_term)


@dataclass(frozen=True)
class ModelRecord:
    index: ModelIndex
    D: int
    loglik: float
    penalty: float
    criterion: float
    chosen: bool = False


@dataclass(frozen=True)
class SelectionReport:
    """Per-model criterion table, the chosen model and how it was chosen."""

    method: str
    records: tuple
    chosen: ModelIndex
    kappa_hat: float | None = None
    fallback: bool = False


def _tie_key(rec: ModelRecord):
    return (rec.criterion, rec.D, rec.index.k, tuple(rec.index.sorted_J()))


def select_penalized(fits, penalty, n: int, method: str = "theoretical",
                     kappa_hat: float | None = None, fallback: bool = False) -> SelectionReport:
    """Minimize -loglik/n + penalty(index) over the fitted collection.

    Exact criterion ties break toward smaller dimension, then smaller k,
    then lexicographically smaller sorted J.
    """
    fits = list(fits)
    if not fits:
        raise ValueError("the fitted collection is empty")
    if n < 1:
        raise ValueError("n must be >= 1")
    records = []
    for fit in fits:
        D = dimension(fit.index.k, len(fit.index.J), fit.params.q)
        pen = float(penalty(fit.index))
        crit = -fit.loglik / n + pen
        records.append(ModelRecord(index=fit.index, D=D, loglik=fit.loglik,
                                   penalty=pen, criterion=crit))
    best = min(records, key=_tie_key)
    records = [
        ModelRecord(r.index, r.D, r.loglik, r.penalty, r.criterion,
                    chosen=(r is best))
        for r in records
    ]
    chosen = next(r.index for r in records if r.chosen)
    return SelectionReport(method=method, records=tuple(records), chosen=chosen,
                           kappa_hat=kappa_hat, fallback=fallback)


def slope_heuristic(fits, n: int) -> SelectionReport:
    """Data-driven penalty: least-squares slope of -loglik/n against D/n on
    the upper half of the distinct dimensions, doubled.  The fit uses the
    best (largest) log-likelihood achieved at each dimension, so weak local
    optima and small-k plateaus sharing a dimension cannot flatten the
    slope.  With fewer than 5 distinct dimensions the report falls back to
    a BIC-style penalty (D/(2n)) log n and is flagged."""
    fits = list(fits)
    if not fits:
        raise ValueError("the fitted collection is empty")
    q = fits[0].params.q
    dims = sorted({dimension(f.index.k, len(f.index.J), q) for f in fits})
    if len(dims) < 5:
        return select_penalized(
            fits,
            lambda idx: dimension(idx.k, len(idx.J), q) * math.log(n) / (2.0 * n),
            n,
            method="slope",
            kappa_hat=None,
            fallback=True,
        )
    cut = dims[len(dims) // 2]
    best_at: dict[int, float] = {}
    for f in fits:
        D = dimension(f.index.k, len(f.index.J), q)
        if D >= cut and (D not in best_at or f.loglik > best_at[D]):
            best_at[D] = f.loglik
    xs = [D / n for D in sorted(best_at)]
    ys = [-best_at[D] / n for D in sorted(best_at)]
    slope = np.polyfit(np.asarray(xs), np.asarray(ys), 1)[0]
    s_hat = max(-float(slope), 0.0)
    kappa_hat = 2.0 * s_hat
    return select_penalized(
        fits,
        lambda idx: kappa_hat * dimension(idx.k, len(idx.J), q) / n,
        n,
        method="slope",
        kappa_hat=kappa_hat,
        fallback=False,
    )


# ---------------------------------------------------------------------------
# report serialization


def report_to_json(report: SelectionReport) -> dict:
    return {
        "method": report.method,
        "kappa_hat": report.kappa_hat,
        "fallback": report.fallback,
        "chosen": {"k": report.chosen.k, "J": [list(c) for c in report.chosen.sorted_J()]},
        "records": [
            {
                "k": r.index.k,
                "J": [list(c) for c in r.index.sorted_J()],
                "D": r.D,
                "loglik": r.loglik,
                "penalty": r.penalty,
                "criterion": r.criterion,
                "chosen": r.chosen,
            }
            for r in report.records
        ],
    }


def save_report(report: SelectionReport, json_path=None, csv_path=None) -> None:
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump(report_to_json(report), fh, indent=2)
            fh.write("\n")
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "J_size", "J", "D", "loglik", "penalty", "criterion", "chosen"])
            for r in report.records:
                w.writerow(
                    [
                        r.index.k,
                        len(r.index.J),
                        ";".join(f"{j}:{z}" for j, z in r.index.sorted_J()),
                        r.D,
                        repr(r.loglik),
                        repr(r.penalty),
                        repr(r.criterion),
                        int(r.chosen),
                    ]
                )
