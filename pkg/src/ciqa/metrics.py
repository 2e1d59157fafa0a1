"""Correlation metrics and the benchmark evaluation loop.

PLCC is computed after mapping predictions through a 4-parameter logistic
(the VQEG convention); SRCC is computed on raw predictions since ranks are
invariant under monotone maps. Lower-better scores are negated before the
regression.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import FitDiverged, LengthMismatch, ZeroVariance


def _check_xy(x, y, min_len=3):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise LengthMismatch(f"length mismatch: {x.size} vs {y.size}")
    if x.size < min_len:
        raise LengthMismatch(f"need at least {min_len} points, got {x.size}")
    return x, y


def plcc(x, y):
    """Pearson linear correlation coefficient."""
    x, y = _check_xy(x, y)
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt(np.sum(xc * xc))
    sy = np.sqrt(np.sum(yc * yc))
    if sx == 0.0 or sy == 0.0:
        raise ZeroVariance("correlation undefined for constant input")
    return float(np.clip(np.sum(xc * yc) / (sx * sy), -1.0, 1.0))


def _ranks(x):
    """Fractional ranks (1-based); ties get the average rank."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    sorted_x = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def srcc(x, y):
    """Spearman rank correlation coefficient with average-rank tie handling."""
    x, y = _check_xy(x, y)
    return plcc(_ranks(x), _ranks(y))


def logistic4(x, b1, b2, b3, b4):
    with np.errstate(over="ignore"):  # saturates harmlessly at b2
        return (b1 - b2) / (1.0 + np.exp(-(x - b3) / abs(b4))) + b2


def logistic4_fit(pred, mos):
    """Fit the 4-parameter logistic mapping pred -> mos by least squares.

    Derivative-free simplex search (Nelder-Mead) from the documented start:
    b1 = max(mos), b2 = min(mos), b3 = median(pred), b4 = std(pred), with one
    restart from the first result. If the fit ends up worse than no mapping
    at all, the identity mapping is returned and flagged via params = None.

    Returns (params_or_None, mapped_pred).
    """
    pred, mos = _check_xy(pred, mos, min_len=5)
    if np.all(mos == mos[0]):
        raise ZeroVariance("mos is constant; logistic fit undefined")
    spread = float(np.std(pred))
    if spread == 0.0:
        raise ZeroVariance("predictions are constant; logistic fit undefined")
    x0 = np.array([np.max(mos), np.min(mos), np.median(pred), spread])

    def sse(b):
        r = logistic4(pred, *b) - mos
        return float(np.dot(r, r))

    best = x0
    for _ in range(2):  # one restart from the incumbent
        res = optimize.minimize(sse, best, method="Nelder-Mead",
                                options={"maxiter": 4000, "xatol": 1e-10,
                                         "fatol": 1e-12})
        best = res.x
    if not np.all(np.isfinite(best)) or best[3] == 0.0:
        raise FitDiverged("logistic parameters became non-finite")
    mapped = logistic4(pred, *best)
    try:
        if plcc(mapped, mos) < plcc(pred, mos):
            return None, pred.copy()
    except ZeroVariance:
        return None, pred.copy()
    return (float(best[0]), float(best[1]), float(best[2]), float(abs(best[3]))), mapped


@dataclass
class MetricsReport:
    plcc: float
    srcc: float
    logistic_params: tuple | None
    n_pairs: int
    reversed: bool

    def to_dict(self):
        return {
            "plcc": self.plcc,
            "srcc": self.srcc,
            "logistic_params": (list(self.logistic_params)
                                if self.logistic_params else None),
            "n_pairs": self.n_pairs,
            "reversed": self.reversed,
        }

    def to_tsv(self, label=""):
        cols = [label, f"{self.plcc:.6f}", f"{self.srcc:.6f}", str(self.n_pairs)]
        return "\t".join(c for c in cols if c != "")


def evaluate(manifest, scorer, lower_better_score=True, n_jobs=1,
             return_pairs=False):
    """Score every manifest pair and correlate against normalized MOS.

    `scorer(ref_path, dist_path) -> float`. Scores are negated first when
    lower_better_score so that higher always means better before the fit.
    Pair order is fixed by the manifest, so threaded scoring is deterministic.
    """
    records = manifest.records
    if any(r.mos_norm is None for r in records):
        raise ValueError("manifest must be normalized (run normalize_mos first)")
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            scores = list(pool.map(lambda r: scorer(r.ref_path, r.dist_path), records))
    else:
        scores = [scorer(r.ref_path, r.dist_path) for r in records]
    pred = np.asarray(scores, dtype=np.float64)
    if lower_better_score:
        pred = -pred
    mos = np.asarray([r.mos_norm for r in records], dtype=np.float64)
    try:
        params, mapped = logistic4_fit(pred, mos)
    except FitDiverged:
        params, mapped = None, pred
    report = MetricsReport(
        plcc=plcc(mapped, mos),
        srcc=srcc(pred, mos),
        logistic_params=params,
        n_pairs=len(records),
        reversed=lower_better_score,
    )
    if return_pairs:
        return report, list(zip(mos.tolist(), mapped.tolist()))
    return report


def write_scatter_csv(pairs, path):
    """Per-pair (mos_norm, mapped_pred) rows for scatter plots."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("mos_norm,mapped_pred\n")
        for mos, mapped in pairs:
            fh.write(f"{mos!r},{mapped!r}\n")
