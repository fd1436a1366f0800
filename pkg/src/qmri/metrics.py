"""Error rates, convergence-ratio series and the statistical / geometric property harnesses."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .bloch import PulseSequence, simulate_sequence
from .errors import ShapeMismatchError
from .maps import ParameterMap


@dataclass
class ErrorReport:
    errors: dict                      # channel -> ||x - x*|| / ||x*|| over omega
    pointwise: dict                   # channel -> |x - x*| grid (zero off omega)
    wall_time: Optional[float] = None
    undefined: tuple = ()             # channels whose reference norm is zero

    def row(self, channels=("T1", "T2", "rho")) -> list:
        return [self.errors.get(c, float("nan")) for c in channels]


def _channel_values(x: ParameterMap) -> dict:
    out = {"T1": x.t1, "T2": x.t2, "rho": x.rho}
    if x.is_complex:
        out["rho_re"] = x.rho.real
        out["rho_im"] = x.rho.imag
    return out


def error_rate(computed: ParameterMap, truth: ParameterMap, wall_time: Optional[float] = None) -> ErrorReport:
    """Channel-wise relative Euclidean errors on the effective domain of ``truth``.

    For complex densities "rho" is the error of the complex map; "rho_re" and "rho_im"
    are reported as well.
    """
    if computed.t1.shape != truth.t1.shape:
        raise ShapeMismatchError(f"grids differ: {computed.t1.shape} vs {truth.t1.shape}")
    omega = truth.omega
    got = _channel_values(computed)
    ref = _channel_values(truth)
    if truth.is_complex and not computed.is_complex:
        got["rho_re"] = computed.rho
        got["rho_im"] = np.zeros_like(computed.rho)
    errors, pointwise, undefined = {}, {}, []
    for name, r in ref.items():
        diff = np.where(omega, np.abs(got[name] - r), 0.0)
        pointwise[name] = diff
        denom = np.linalg.norm(r[omega])
        if denom == 0:
            errors[name] = float("nan")
            undefined.append(name)
        else:
            errors[name] = float(np.linalg.norm(diff[omega]) / denom)
    return ErrorReport(errors, pointwise, wall_time, tuple(undefined))


def iterate_ratios(report, rtol: float = 1e-12) -> dict:
    """Per-channel ratios ||x_{n+1} - x_n|| / ||x_n - x_{n-1}||.

    The series stops at the first step that is zero or, with ``rtol`` > 0, no larger than
    rtol * ||x_n|| (the iteration has reached round-off level).
    """
    steps = report.step_array()
    norms = np.asarray(report.norms, dtype=float) if getattr(report, "norms", None) else None
    names = list(report.channel_names)
    if steps.shape[1] == 4:
        steps = np.column_stack([steps[:, :2], np.hypot(steps[:, 2], steps[:, 3]), steps[:, 2:]])
        if norms is not None:
            norms = np.column_stack([norms[:, :2], np.hypot(norms[:, 2], norms[:, 3]), norms[:, 2:]])
        names = ["T1", "T2", "rho", "rho_re", "rho_im"]
    out = {}
    for c, name in enumerate(names):
        series = []
        for n in range(1, steps.shape[0]):
            prev, cur = steps[n - 1, c], steps[n, c]
            floor = rtol * norms[n, c] if norms is not None else 0.0
            if prev <= floor or cur <= floor:
                break
            series.append(cur / prev)
        out[name] = np.asarray(series)
    return out


def is_strictly_decreasing(series, last: Optional[int] = None) -> bool:
    s = np.asarray(series, dtype=float)
    if last is not None:
        s = s[-last:]
    return bool(s.size >= 2 and np.all(np.diff(s) < 0))


# -- least-squares concentration (Monte Carlo vs Chebyshev bound) ----------------------

@dataclass
class ChebyshevRow:
    L: int
    epsilon: float
    empirical: float
    bound: float
    trace: float


def banded_matrix(d: int, p: int, band, rng: np.random.Generator) -> np.ndarray:
    """d x p matrix U diag(s) V^T with orthonormal factors and singular values uniform in [sqrt c, sqrt C]."""
    c_lo, c_hi = band
    if d < p:
        raise ValueError("need d >= p for a full-rank block")
    if not 0 < c_lo <= c_hi:
        raise ValueError("singular-value band must satisfy 0 < c <= C (rank-deficient blocks are rejected)")
    U, _ = np.linalg.qr(rng.standard_normal((d, p)))
    V, _ = np.linalg.qr(rng.standard_normal((p, p)))
    sv = np.sqrt(rng.uniform(c_lo, c_hi, p))
    return (U * sv) @ V.T


def chebyshev_trial(p: int = 4, d: int = 8, L_values: Sequence[int] = (4, 16, 64), sigma: float = 1.0,
                    trials: int = 10_000, epsilon: Sequence[float] = (0.25, 0.5, 1.0), band=(0.5, 2.0),
                    seed: int = 0) -> list:
    """Empirical P(||zeta_ls - zeta*|| > eps) for stacked systems A_l zeta = b_l + noise, against
    the bound sigma^2 Tr((A^T A)^-1) / eps^2. Each L uses its own seeded stream."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    rows = []
    for k, L in enumerate(L_values):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, k])))
        A = np.vstack([banded_matrix(d, p, band, rng) for _ in range(L)])
        gram = A.T @ A
        if np.linalg.matrix_rank(gram) < p:
            raise ValueError("stacked system is rank deficient")
        ginv = np.linalg.inv(gram)
        trace = float(np.trace(ginv))
        zeta = rng.standard_normal(p)
        noise = sigma * rng.standard_normal((trials, L * d))
        b = A @ zeta + noise
        est = np.linalg.solve(gram, A.T @ b.T).T
        dist = np.linalg.norm(est - zeta, axis=1)
        for eps in epsilon:
            rows.append(ChebyshevRow(int(L), float(eps), float(np.mean(dist > eps)),
                                     float(sigma**2 * trace / eps**2), trace))
    return rows


def trace_slope(rows: Sequence[ChebyshevRow]) -> float:
    """Log-log slope of Tr((A^T A)^-1) against L."""
    pairs = sorted({(r.L, r.trace) for r in rows})
    L = np.log([q[0] for q in pairs])
    t = np.log([q[1] for q in pairs])
    return float(np.polyfit(L, t, 1)[0])


# -- non-convexity of the discrete Bloch image -------------------------------------------

@dataclass
class NonconvexityCertificate:
    midpoint: np.ndarray          # (L, 3) average of the two trajectories
    margin: float                 # min over the searched thetas of ||M(theta) - midpoint||
    best_theta: tuple
    grid_margin: float            # the same minimum restricted to the grid
    grid_shape: tuple
    grid_ratio: tuple             # spacing ratio of the log-spaced T1 and T2 grids (resolution caveat)
    refined_from: list = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.margin > 0


def _frames(T1, T2, seq):
    return simulate_sequence((T1, T2), seq).frames


def nonconvexity_certificate(theta_a, theta_b, seq: PulseSequence, t1_range=(1.0, 5500.0),
                             t2_range=(0.1, 550.0), grid=(400, 400), refine: int = 12) -> NonconvexityCertificate:
    """Distance from the midpoint of two Bloch trajectories to the set {M(theta)}.

    A log-spaced grid is scanned, then the ``refine`` best grid points seed bounded
    least-squares refinements. A positive margin certifies that the midpoint is not itself a
    trajectory (up to the resolution of the search).
    """
    if seq.L < 2:
        raise ValueError("need a sequence with L >= 2")
    ma = _frames(theta_a[0], theta_a[1], seq)
    mb = _frames(theta_b[0], theta_b[1], seq)
    y = 0.5 * (ma + mb)
    t1 = np.geomspace(*t1_range, grid[0])
    t2 = np.geomspace(*t2_range, grid[1])
    T1, T2 = np.meshgrid(t1, t2, indexing="ij")
    fr = simulate_sequence((T1, T2), seq).frames          # (L, n1, n2, 3)
    dist = np.sqrt(((fr - y[:, None, None, :]) ** 2).sum(axis=(0, 3)))
    order = np.argsort(dist.ravel(), kind="stable")
    grid_margin = float(dist.ravel()[order[0]])
    best = (float(T1.ravel()[order[0]]), float(T2.ravel()[order[0]]))
    margin = grid_margin
    lo = np.array([t1_range[0], t2_range[0]])
    hi = np.array([t1_range[1], t2_range[1]])
    starts = []

    def resid(th):
        return (_frames(th[0], th[1], seq) - y).ravel()

    for k in order[:refine]:
        start = np.array([T1.ravel()[k], T2.ravel()[k]])
        starts.append(tuple(start))
        sol = least_squares(resid, start, bounds=(lo, hi), x_scale=start, xtol=1e-14, ftol=1e-15, gtol=1e-15)
        val = float(np.linalg.norm(sol.fun))
        if val < margin:
            margin, best = val, (float(sol.x[0]), float(sol.x[1]))
    ratio = (float(t1[1] / t1[0]), float(t2[1] / t2[0]))
    return NonconvexityCertificate(y, margin, best, grid_margin, tuple(grid), ratio, starts)


# -- CSV emitters ------------------------------------------------------------------------

def write_comparison_csv(path, rows):
    """Method comparison table: one row per (label, ErrorReport) in the given order.

    ``path`` may also be an open text stream.
    """
    def emit(fh):
        w = csv.writer(fh)
        w.writerow(["method", "time_s", "ER_T1", "ER_T2", "ER_rho"])
        for label, rep in rows:
            t = "" if rep.wall_time is None else repr(float(rep.wall_time))
            w.writerow([label, t] + [repr(float(v)) for v in rep.row()])

    if hasattr(path, "write"):
        emit(path)
    else:
        with open(path, "w", newline="") as fh:
            emit(fh)


def write_series_csv(path, series: dict):
    """Columns ``iteration`` plus one column per named series (ragged series are padded)."""
    n = max((len(v) for v in series.values()), default=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration"] + list(series))
        for i in range(n):
            w.writerow([i + 1] + [repr(float(v[i])) if i < len(v) else "" for v in series.values()])


__all__ = [
    "ErrorReport", "error_rate", "iterate_ratios", "is_strictly_decreasing", "ChebyshevRow",
    "banded_matrix", "chebyshev_trial", "trace_slope", "NonconvexityCertificate",
    "nonconvexity_certificate", "write_comparison_csv", "write_series_csv",
]
