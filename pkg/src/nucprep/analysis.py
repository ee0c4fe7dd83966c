"""Post-processing: overlap lower bounds, overlap extrapolation and Pareto fronts."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import least_squares, minimize_scalar

__all__ = [
    "wootters_bound",
    "OverlapDataset",
    "ExtrapolationError",
    "FitDiagnostics",
    "fit_asymptote",
    "extrapolate_overlap",
    "ParetoPoint",
    "pareto_front",
    "ReportRow",
    "REPORT_COLUMNS",
    "report_csv",
    "pareto_csv",
]


def wootters_bound(ab: float, bc: float) -> float:
    """Lower bound on ``|<a|c>|`` from ``|<a|b>|`` and ``|<b|c>|``.

    The angles ``arccos`` of the two overlaps obey a triangle inequality,
    so ``|<a|c>| >= cos(t1 + t2)``, clamped at zero.
    """
    for name, v in (("ab", ab), ("bc", bc)):
        if not 0.0 <= v <= 1.0 or math.isnan(v):
            raise ValueError(f"{name}={v!r} is not an overlap magnitude in [0, 1]")
    val = ab * bc - math.sqrt(1.0 - ab * ab) * math.sqrt(1.0 - bc * bc)
    return max(0.0, min(1.0, val))


class ExtrapolationError(ValueError):
    pass


@dataclass
class OverlapDataset:
    """Records ``(chi_small, chi_large, overlap_sq)``."""

    records: list = field(default_factory=list)

    def __post_init__(self):
        recs = []
        for cs, cl, f in self.records:
            cs, cl, f = int(cs), int(cl), float(f)
            if cs >= cl:
                raise ValueError(f"chi_small={cs} must be smaller than chi_large={cl}")
            if not 0.0 <= f <= 1.0 + 1e-12:
                raise ValueError(f"overlap_sq={f} outside [0, 1]")
            recs.append((cs, cl, min(f, 1.0)))
        self.records = recs

    def add(self, chi_small: int, chi_large: int, overlap_sq: float) -> None:
        self.records.extend(OverlapDataset([(chi_small, chi_large, overlap_sq)]).records)

    def series(self, chi_small: int, chi_large_set: Optional[Iterable[int]] = None):
        """Sorted ``(chi_large, overlap_sq)`` arrays for one ``chi_small``."""
        allowed = None if chi_large_set is None else set(chi_large_set)
        pts = sorted((cl, f) for cs, cl, f in self.records
                     if cs == chi_small and (allowed is None or cl in allowed))
        return np.array([p[0] for p in pts], dtype=float), np.array([p[1] for p in pts])

    @classmethod
    def from_states(cls, states: dict, overlap_fn) -> "OverlapDataset":
        """All pairs from ``{chi: state}`` using ``overlap_fn(a, b)`` (a magnitude)."""
        chis = sorted(states)
        recs = [(a, b, overlap_fn(states[a], states[b]) ** 2) for i, a in enumerate(chis) for b in chis[i + 1:]]
        return cls(recs)


@dataclass
class FitDiagnostics:
    asymptotes: dict                 # chi_small -> c
    stage1_residuals: dict           # chi_small -> rms residual of the log fit
    stage1_slopes: dict
    stage2_coeffs: tuple             # (intercept, slope) of log(1 - c) vs (log chi)^2
    stage2_residual: float
    warnings: list = field(default_factory=list)


def _linfit(x: np.ndarray, y: np.ndarray):
    a = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    return coef, y - a @ coef


def fit_asymptote(chi_large: Sequence[float], overlap_sq: Sequence[float]):
    """Fit ``log(F - c) = a + b (log chi)^2`` and return ``(c, a, b, rms)``.

    ``c`` is first located by a bounded scalar search over ``[0, min F)`` on
    the residual norm of the inner linear fit, then polished together with
    ``a`` and ``b`` by nonlinear least squares.
    """
    x = np.log(np.asarray(chi_large, dtype=float)) ** 2
    f = np.asarray(overlap_sq, dtype=float)
    if len(np.unique(x)) < 3:
        raise ExtrapolationError("the asymptote fit needs at least 3 distinct chi_large values")
    fmin = float(f.min())
    if np.ptp(f) <= 1e-14 * max(fmin, 1e-300):
        return fmin, 0.0, 0.0, 0.0

    def resid_norm(c):
        # residual relative to the spread of log(F - c), i.e. sqrt(1 - R^2);
        # the raw residual shrinks trivially as c -> 0 when F barely varies
        d = f - c
        if np.any(d <= 0):
            return np.inf
        y = np.log(d)
        _, r = _linfit(x, y)
        return float(np.linalg.norm(r) / max(np.linalg.norm(y - y.mean()), 1e-300))

    hi = fmin * (1 - 1e-15) if fmin > 0 else 0.0
    if hi <= 0:
        raise ExtrapolationError("overlaps must be positive for the asymptote fit")
    # dense grid in log distance to the upper end (the basin around the true
    # asymptote can be narrow), then a bounded refinement of the best cell
    grid = hi - np.geomspace(hi * 1e-13, hi, 20001)
    ok = grid < fmin
    grid = grid[ok]
    ys = np.log(f[None, :] - grid[:, None])
    a = np.column_stack([np.ones_like(x), x])
    proj = np.eye(len(x)) - a @ np.linalg.pinv(a)
    vals = np.linalg.norm(ys @ proj.T, axis=1) / np.maximum(
        np.linalg.norm(ys - ys.mean(axis=1, keepdims=True), axis=1), 1e-300)
    k = int(np.argmin(vals))
    lo_b, hi_b = grid[min(k + 1, len(grid) - 1)], grid[max(k - 1, 0)]
    res = minimize_scalar(resid_norm, bounds=(min(lo_b, hi_b), max(lo_b, hi_b)), method="bounded",
                          options={"xatol": 1e-15})
    c0 = float(res.x) if res.fun <= vals[k] else float(grid[k])
    coef, _ = _linfit(x, np.log(f - c0))

    def model_res(p):
        return np.log(np.maximum(f - p[2], 1e-300)) - p[0] - p[1] * x

    sol = least_squares(model_res, [coef[0], coef[1], c0], bounds=([-np.inf, -np.inf, 0.0], [np.inf, np.inf, hi]),
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, method="trf")
    a, b, c = (float(v) for v in sol.x)
    if resid_norm(c) > resid_norm(c0):
        a, b, c = float(coef[0]), float(coef[1]), c0
    rms = float(np.sqrt(np.mean(model_res([a, b, c]) ** 2)))
    return c, a, b, rms


def extrapolate_overlap(data: OverlapDataset, chi_small_set: Sequence[int], chi_large_set: Sequence[int],
                        chi_query: int):
    """Estimate ``|<Phi(chi_query)|Phi(inf)>|^2`` by the two-stage fit.

    Stage one finds the asymptote ``c(chi')`` of each overlap series. Stage
    two fits ``log(1 - c)`` linearly in ``(log chi')^2`` and evaluates the fit
    at ``chi_query``. Returns ``(estimate, FitDiagnostics)``.
    """
    chi_small_set = sorted(set(int(c) for c in chi_small_set))
    if len(chi_small_set) < 3:
        raise ExtrapolationError("need at least 3 distinct chi_small values")
    diag = FitDiagnostics({}, {}, {}, (0.0, 0.0), 0.0)
    for cs in chi_small_set:
        xl, f = data.series(cs, chi_large_set)
        if len(xl) < 3:
            raise ExtrapolationError(f"chi_small={cs}: need at least 3 distinct chi_large values, got {len(xl)}")
        if np.any(np.diff(f) > 1e-12):
            diag.warnings.append(f"chi_small={cs}: overlaps are not monotone in chi_large")
        c, _, b, rms = fit_asymptote(xl, f)
        diag.asymptotes[cs] = c
        diag.stage1_residuals[cs] = rms
        diag.stage1_slopes[cs] = b
    cs_arr = np.array(chi_small_set, dtype=float)
    cvals = np.array([diag.asymptotes[c] for c in chi_small_set])
    if np.all(cvals >= 1.0 - 1e-15):
        return 1.0, diag
    if np.any(cvals >= 1.0):
        raise ExtrapolationError("an asymptote reached 1; log(1 - c) is undefined")
    coef, r = _linfit(np.log(cs_arr) ** 2, np.log(1.0 - cvals))
    diag.stage2_coeffs = (float(coef[0]), float(coef[1]))
    diag.stage2_residual = float(np.sqrt(np.mean(r ** 2)))
    est = 1.0 - math.exp(coef[0] + coef[1] * math.log(chi_query) ** 2)
    return float(est), diag


@dataclass(frozen=True)
class ParetoPoint:
    t_count: int
    infidelity: float
    circuit_id: str
    eps: float = float("nan")
    layers: int = 0
    strategy: str = ""

    def __post_init__(self):
        if not -1e-12 <= self.infidelity <= 1.0 + 1e-12:
            raise ValueError(f"infidelity {self.infidelity} outside [0, 1]")


def pareto_front(points: Iterable[ParetoPoint]) -> list:
    """Points not dominated in (t_count, infidelity), sorted by t_count then id."""
    pts = sorted(points, key=lambda p: (p.t_count, p.infidelity, p.circuit_id))
    front = []
    best = math.inf
    i = 0
    while i < len(pts):
        j = i
        while j < len(pts) and pts[j].t_count == pts[i].t_count:
            j += 1
        group = pts[i:j]
        lowest = group[0].infidelity
        if lowest < best:
            front.extend(p for p in group if p.infidelity == lowest)
            best = lowest
        i = j
    return sorted(front, key=lambda p: (p.t_count, p.circuit_id))


REPORT_COLUMNS = ("circuit_id", "layers", "eps", "strategy", "rz_total", "t_count",
                  "overlap_to_target", "bound_to_exact")


@dataclass
class ReportRow:
    circuit_id: str
    layers: int
    eps: float
    strategy: str
    rz_total: int
    t_count: int
    overlap_to_target: float
    bound_to_exact: float

    def infidelity(self) -> float:
        return 1.0 - self.bound_to_exact ** 2

    def pareto_point(self) -> ParetoPoint:
        return ParetoPoint(self.t_count, self.infidelity(), self.circuit_id, self.eps, self.layers, self.strategy)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def report_csv(rows: Iterable[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in REPORT_COLUMNS])
    return buf.getvalue()


def pareto_csv(points: Iterable[ParetoPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("circuit_id", "layers", "eps", "strategy", "t_count", "infidelity"))
    for p in points:
        w.writerow([p.circuit_id, p.layers, _fmt(p.eps), p.strategy, p.t_count, _fmt(p.infidelity)])
    return buf.getvalue()
