"""Evaluation metrics: 4-parameter logistic mapping then PLCC/SROCC/KROCC/RMSE.

Predicted scores are first fitted to the ground-truth scale with a
monotone four-parameter logistic (Nelder-Mead least squares), after
which Pearson correlation and RMSE are computed on the mapped values.
Rank metrics use average ranks for ties (Spearman) and tau-b (Kendall)
and are computed on the raw predictions, which the monotone mapping
cannot reorder.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats
from scipy.special import expit

from .errors import ValidationError

#: Results reported for the original model of this architecture on its
#: source dataset (300 sequences, proprietary, with large pretrained
#: backbones). Neither that dataset nor those weights are public, so
#: these numbers are NOT reproducible with this toolkit; they are kept
#: only as documented reference constants.
REFERENCE_RESULTS = {
    "srocc": 0.8245,
    "plcc": 0.8590,
    "krocc": 0.6436,
    "rmse": 0.5772,
}


@dataclass
class LogisticFit:
    beta: tuple[float, float, float, float]
    mapped: np.ndarray
    sse: float
    degenerate: bool = False


@dataclass
class MetricReport:
    plcc: float
    srocc: float
    krocc: float
    rmse: float
    beta: tuple[float, float, float, float]
    n: int


def logistic4(x, b1, b2, b3, b4):
    """(b1-b2)/(1+exp(-(x-b3)/|b4|)) + b2; |b4| keeps the curve monotone."""
    scale = max(abs(b4), 1e-12)
    return (b1 - b2) * expit((np.asarray(x, dtype=np.float64) - b3) / scale) + b2


def logistic_fit(pred, mos) -> LogisticFit:
    """Least-squares 4-parameter logistic fit of pred onto the mos scale.

    Nelder-Mead from b1=max(mos), b2=min(mos), b3=median(pred),
    b4=std(pred)/4; at most 2000 iterations or simplex size below 1e-10.
    A constant mos is degenerate: the identity mapping is returned with
    a warning.
    """
    pred = np.asarray(pred, dtype=np.float64)
    mos = np.asarray(mos, dtype=np.float64)
    if pred.shape != mos.shape or pred.ndim != 1:
        raise ValidationError("pred and mos must be equal-length 1-D arrays")
    if len(pred) < 5:
        raise ValidationError(f"logistic fit needs n >= 5, got {len(pred)}")
    if np.ptp(mos) == 0:
        warnings.warn("constant ground truth: logistic fit degenerates to identity")
        c = float(mos[0])
        return LogisticFit(
            beta=(c, c, float(np.median(pred)), 1.0),
            mapped=pred.copy(),
            sse=float(((pred - mos) ** 2).sum()),
            degenerate=True,
        )

    x0 = np.array([
        mos.max(),
        mos.min(),
        float(np.median(pred)),
        max(float(pred.std()) / 4.0, 1e-6),
    ])

    def sse(beta):
        r = logistic4(pred, *beta) - mos
        return float(r @ r)

    res = optimize.minimize(
        sse, x0, method="Nelder-Mead",
        options={"maxiter": 2000, "maxfev": 4000, "xatol": 1e-10, "fatol": 1e-12},
    )
    mapped = logistic4(pred, *res.x)
    return LogisticFit(beta=tuple(float(b) for b in res.x), mapped=mapped,
                       sse=float(res.fun))


def _validated_pair(x, y, min_n: int = 2):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("inputs must be equal-length 1-D arrays")
    if len(x) < min_n:
        raise ValidationError(f"need at least {min_n} points, got {len(x)}")
    return x, y


def plcc(x, y) -> float:
    """Pearson linear correlation; constant input is an explicit error."""
    x, y = _validated_pair(x, y)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValidationError("correlation undefined for constant input")
    return float(np.corrcoef(x, y)[0, 1])


def srocc(x, y) -> float:
    """Spearman rank correlation, ties get average ranks."""
    x, y = _validated_pair(x, y)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValidationError("rank correlation undefined for constant input")
    return float(stats.spearmanr(x, y).correlation)


def krocc(x, y) -> float:
    """Kendall rank correlation, tau-b tie correction."""
    x, y = _validated_pair(x, y)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValidationError("rank correlation undefined for constant input")
    return float(stats.kendalltau(x, y, variant="b").correlation)


def rmse(x, y) -> float:
    x, y = _validated_pair(x, y, min_n=1)
    return float(np.sqrt(np.mean((x - y) ** 2)))


def evaluate_predictions(pred, mos) -> MetricReport:
    """Full metric suite: logistic mapping, then the four criteria."""
    pred = np.asarray(pred, dtype=np.float64)
    mos = np.asarray(mos, dtype=np.float64)
    fit = logistic_fit(pred, mos)
    return MetricReport(
        plcc=plcc(fit.mapped, mos),
        srocc=srocc(pred, mos),
        krocc=krocc(pred, mos),
        rmse=rmse(fit.mapped, mos),
        beta=fit.beta,
        n=len(pred),
    )


_REPORT_HEADER = ["plcc", "srocc", "krocc", "rmse", "n", "b1", "b2", "b3", "b4"]


def write_report_csv(report: MetricReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(_REPORT_HEADER)
        writer.writerow(
            [f"{report.plcc:.6f}", f"{report.srocc:.6f}", f"{report.krocc:.6f}",
             f"{report.rmse:.6f}", report.n]
            + [f"{b:.6f}" for b in report.beta]
        )
