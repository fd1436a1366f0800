"""Projected Gauss-Newton / Levenberg-Marquardt iterations for Q(x) = D."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional

import numpy as np

from .bloch import PulseSequence
from .encoding import KSpaceData, Linearization, QOperator, SamplingMask
from .errors import ShapeMismatchError
from .maps import FeasibleBox, ParameterMap


@dataclass(frozen=True)
class SolverConfig:
    """Damping schedule lambda_n = max(lambda0 * beta**n, epsilon * ||Q(x_n) - D||).

    With ``damping_units="unnormalized"`` (default) lambda0 and the residual inside the
    epsilon term are read against the unnormalised DFT, so the customary values
    (lambda0 = s**2, epsilon = 1e-8) keep the same weight relative to the Gram matrix on any
    grid size. ``"unitary"`` applies them to the unitary operator as is.
    """

    lambda0: Optional[float] = None       # None -> s**2
    beta: float = 0.01
    epsilon: float = 0.0
    max_iters: int = 25
    varrho: Optional[float] = None
    delta: Optional[float] = None
    cg_tol: float = 1e-8
    cg_maxiter: int = 200
    box: FeasibleBox = field(default_factory=FeasibleBox)
    project: bool = True
    fast_path: bool = True
    damping_units: str = "unnormalized"
    active_set: bool = False

    def __post_init__(self):
        if self.lambda0 is not None and self.lambda0 < 0:
            raise ValueError("lambda0 must be >= 0")
        if not 0 <= self.beta < 1:
            raise ValueError("beta must lie in [0, 1)")
        if not 0 <= self.epsilon < 1:
            raise ValueError("epsilon must lie in [0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.varrho is not None and self.varrho <= 0:
            raise ValueError("varrho must be > 0")
        if self.delta is not None and self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.damping_units not in ("unnormalized", "unitary"):
            raise ValueError(f"unknown damping_units {self.damping_units!r}")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("lambda0", "beta", "epsilon", "max_iters", "varrho", "delta",
                                          "cg_tol", "cg_maxiter", "project", "fast_path", "damping_units",
                                          "active_set")}
        d["box"] = self.box.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        kw = dict(d)
        if "box" in kw:
            kw["box"] = FeasibleBox.from_dict(kw["box"])
        return cls(**kw)


@dataclass
class SolveReport:
    channel_names: tuple
    residuals: list = field(default_factory=list)      # entry 0 is ||Q(x_0) - D||
    lambdas: list = field(default_factory=list)
    steps: list = field(default_factory=list)          # per-iteration step norm per channel
    norms: list = field(default_factory=list)          # per-channel ||x_n||, entry 0 is x_0
    cg_iterations: list = field(default_factory=list)
    cg_converged: list = field(default_factory=list)
    frozen_pixels: list = field(default_factory=list)
    termination: str = ""
    wall_time: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.lambdas)

    def step_array(self) -> np.ndarray:
        return np.asarray(self.steps, dtype=float).reshape(-1, len(self.channel_names))

    def rho_steps(self) -> np.ndarray:
        s = self.step_array()
        return np.hypot(s[:, 2], s[:, 3]) if s.shape[1] == 4 else s[:, 2]

    def to_csv(self, path):
        s = self.step_array()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "residual", "lambda", "step_T1", "step_T2", "step_rho"])
            for n in range(self.iterations):
                w.writerow([n + 1, repr(float(self.residuals[n + 1])), repr(float(self.lambdas[n])),
                            repr(float(s[n, 0])), repr(float(s[n, 1])), repr(float(self.rho_steps()[n]))])


class StepResult(NamedTuple):
    h: np.ndarray
    converged: bool
    iterations: int
    frozen: np.ndarray   # boolean per pixel; only the direct path freezes pixels


def conjugate_gradient(apply_A: Callable, b: np.ndarray, tol: float = 1e-8, maxiter: int = 200):
    """CG for a symmetric positive (semi)definite operator; returns the iterate with the
    smallest residual seen, whether ``||r|| <= tol ||b||`` was reached, and the iteration count."""
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return x, True, 0
    r = b.copy()
    p = r.copy()
    rr = float(np.vdot(r, r).real)
    best, best_norm = x.copy(), np.sqrt(rr)
    for k in range(1, maxiter + 1):
        Ap = apply_A(p)
        pAp = float(np.vdot(p, Ap).real)
        if pAp <= 0:
            return best, False, k
        a = rr / pAp
        x = x + a * p
        r = r - a * Ap
        rr_new = float(np.vdot(r, r).real)
        rn = np.sqrt(rr_new)
        if rn < best_norm:
            best, best_norm = x.copy(), rn
        if rn <= tol * bnorm:
            return best, True, k
        p = r + (rr_new / rr) * p
        rr = rr_new
    return best, False, maxiter


_COND_LIMIT = 1e13


def row_pattern(mask: SamplingMask):
    """Detect masks whose frames sample whole k-space rows {k : k = c_l mod s} (0-based).

    Returns ``(s, offsets)`` or None. Full sampling is the case s = 1.
    """
    frames = mask.frames
    rows = frames.any(axis=2)
    if not np.array_equal(rows, frames.all(axis=2)):
        return None
    N = mask.N
    counts = rows.sum(axis=1)
    if counts.min() == 0 or counts.min() != counts.max() or N % counts[0]:
        return None
    s = N // int(counts[0])
    offsets = np.argmax(rows, axis=1)
    expected = (np.arange(N)[None, :] % s) == (offsets[:, None] % s)
    if not np.array_equal(rows, expected):
        return None
    return s, offsets


def _block_solve(lin: Linearization, rhs: np.ndarray, damping: float, pattern, free: np.ndarray):
    """Exact direct solve of (A^T A + damping I) h = rhs for row-periodic masks.

    With rows k = c_l (mod s) sampled in frame l, F^-1 P^T P F couples only the pixels
    (y + q N/s, x), q = 0..s-1, with weight exp(2 pi i c_l q / s) / s, so the normal matrix is
    block diagonal with (s C) x (s C) blocks. Blocks that are numerically singular are frozen.
    Unknowns with ``free`` False are held at zero.
    """
    s, offsets = pattern
    op = lin.op
    N, L = op.N, op.L
    C = lin.columns.shape[0]
    P = rhs.shape[0]
    n = N // s
    # full-grid layout (C, L, N, N) -> (C, L, s, n, N): pixel (q n + r, x)
    cols = np.zeros((C, L, N * N), dtype=complex)
    cols[:, :, op._flat_idx] = lin.columns
    cols = cols.reshape(C, L, s, n, N)
    phase = np.exp(-2j * np.pi * np.outer(offsets, np.arange(s)) / s)   # (L, s)
    a = cols * phase[None, :, :, None, None]
    # blocks indexed by group g = (r, x) with unknowns (q, c)
    a = a.transpose(3, 4, 1, 2, 0).reshape(n * N, L, s * C)
    G = np.einsum("glu,glv->guv", a.conj(), a).real / s
    b = np.zeros((C, N * N))
    b[:, op._flat_idx] = rhs.T
    b = b.reshape(C, s, n, N).transpose(2, 3, 1, 0).reshape(n * N, s * C)
    on = np.zeros((C, N * N), dtype=bool)
    on[:, op._flat_idx] = free.T
    on = on.reshape(C, s, n, N).transpose(2, 3, 1, 0).reshape(n * N, s * C)
    G = G + damping * np.eye(s * C)
    # unknowns outside the support are decoupled with a unit diagonal (their rhs is zero)
    G *= on[:, :, None] & on[:, None, :]
    d = np.arange(s * C)
    G[:, d, d] = np.where(on, G[:, d, d], 1.0)
    scale = np.sqrt(np.maximum(np.einsum("gii->gi", G), 0))
    ok = np.all(scale > 0, axis=1)
    h = np.zeros_like(b)
    if np.any(ok):
        # Jacobi scaling makes the conditioning test insensitive to channel units.
        sc = scale[ok]
        Gs = G[ok] / (sc[:, :, None] * sc[:, None, :])
        cond = np.linalg.cond(Gs)
        good = np.isfinite(cond) & (cond < _COND_LIMIT)
        okidx = np.flatnonzero(ok)
        ok[okidx[~good]] = False
        sel = okidx[good]
        if sel.size:
            z = np.linalg.solve(Gs[good], (b[sel] / sc[good])[..., None])[..., 0]
            h[sel] = z / sc[good]
    h = h.reshape(n, N, s, C).transpose(3, 2, 0, 1).reshape(C, N * N)[:, op._flat_idx].T
    frozen_groups = np.repeat(~ok[:, None], s, axis=1).reshape(n, N, s).transpose(2, 0, 1).ravel()
    return h, frozen_groups[op._flat_idx]


def lm_step(lin: Linearization, residual: np.ndarray, damping: float, cg_tol: float = 1e-8,
            cg_maxiter: int = 200, fast_path: bool = True, fixed: Optional[np.ndarray] = None) -> StepResult:
    """h = argmin ||Q'(x) h - r||^2 + damping ||h||^2 with r = D - Q(x) (unitary units).

    With ``fast_path`` and a row-periodic mask (full sampling or periodic Cartesian) the normal
    equations are block diagonal and are solved directly; otherwise matrix-free CG is used.
    Entries flagged in the (P, C) boolean ``fixed`` are excluded from the step (h = 0 there).
    """
    if damping < 0:
        raise ValueError("damping must be >= 0")
    rhs = lin.adjoint(residual)
    P, C = rhs.shape
    free = np.ones((P, C), dtype=bool) if fixed is None else ~np.asarray(fixed, dtype=bool)
    rhs = np.where(free, rhs, 0.0)
    if not np.any(rhs):
        return StepResult(np.zeros_like(rhs), True, 0, np.zeros(P, dtype=bool))
    pattern = row_pattern(lin.op.mask) if fast_path else None
    if pattern is not None:
        h, frozen = _block_solve(lin, rhs, damping, pattern, free)
        return StepResult(h, True, 0, frozen)

    def apply(v):
        v = v.reshape(P, C) * free
        return (lin.normal(v, damping) * free + v * ~free).ravel()

    h, ok, its = conjugate_gradient(apply, rhs.ravel(), cg_tol, cg_maxiter)
    return StepResult(h.reshape(P, C), ok, its, np.zeros(P, dtype=bool))


def project_box(x: ParameterMap, box: FeasibleBox) -> ParameterMap:
    """Clamp every channel of the pixels in omega to the box; the background stays zero."""
    vec = box.clip(x.to_vector())
    out = ParameterMap.from_vector(vec, x.omega, complex_rho=x.is_complex)
    return out


def _scale(mask: SamplingMask, cfg: SolverConfig) -> float:
    """Factor between squared norms of the unnormalised and unitary DFT (N^2)."""
    return float(mask.N) ** 2 if cfg.damping_units == "unnormalized" else 1.0


def solve_lm(x0: ParameterMap, D: KSpaceData, seq: PulseSequence, mask: Optional[SamplingMask] = None,
             cfg: Optional[SolverConfig] = None, callback: Optional[Callable] = None):
    """Projected Levenberg-Marquardt: x_{n+1} = P_box(x_n + h_n).

    Only the pixels of ``x0.omega`` are unknowns. ``callback(n, ParameterMap)`` is called after
    every accepted iterate. Returns ``(ParameterMap, SolveReport)``.
    """
    cfg = cfg or SolverConfig()
    mask = D.mask if mask is None else mask
    if mask.frames.shape != D.data.shape:
        raise ShapeMismatchError("mask and data shapes differ")
    if x0.t1.shape != (mask.N, mask.N):
        raise ShapeMismatchError(f"initial map grid {x0.t1.shape} != data grid {(mask.N, mask.N)}")
    t_start = time.perf_counter()
    op = QOperator(seq, mask, x0.omega, complex_rho=x0.is_complex)
    lower, _ = cfg.box.bounds(x0.is_complex)
    vec = x0.to_vector()
    vec = cfg.box.clip(vec) if cfg.project else _floor_relaxation(vec, lower)
    lam0 = float(mask.factor) ** 2 if cfg.lambda0 is None else float(cfg.lambda0)
    scale = _scale(mask, cfg)
    report = SolveReport(channel_names=tuple(x0.channel_names))

    lin = op.linearize(vec)
    r = D.data - lin.forward()
    res = float(np.linalg.norm(r))
    report.residuals.append(res)
    report.norms.append(np.linalg.norm(vec, axis=0).tolist())
    reason = "max_iters"
    for n in range(cfg.max_iters):
        if cfg.varrho is not None and cfg.delta is not None and res <= cfg.varrho * cfg.delta:
            reason = "discrepancy"
            break
        lam = max(lam0 * cfg.beta ** n, cfg.epsilon * res * np.sqrt(scale))
        fixed = _active_bounds(vec, lin.adjoint(r), cfg.box) if cfg.project and cfg.active_set else None
        step = lm_step(lin, r, lam / scale, cfg.cg_tol, cfg.cg_maxiter, cfg.fast_path, fixed)
        new = vec + step.h
        new = cfg.box.clip(new) if cfg.project else _floor_relaxation(new, lower)
        dx = new - vec
        vec = new
        lin = op.linearize(vec)
        r = D.data - lin.forward()
        res = float(np.linalg.norm(r))
        report.residuals.append(res)
        report.lambdas.append(lam)
        report.steps.append(np.linalg.norm(dx, axis=0).tolist())
        report.norms.append(np.linalg.norm(vec, axis=0).tolist())
        report.cg_iterations.append(step.iterations)
        report.cg_converged.append(bool(step.converged))
        report.frozen_pixels.append(int(step.frozen.sum()))
        if callback is not None:
            callback(n + 1, ParameterMap.from_vector(vec, x0.omega, x0.is_complex))
        if not np.any(dx):
            reason = "stationary"
            break
    else:
        if cfg.varrho is not None and cfg.delta is not None and res <= cfg.varrho * cfg.delta:
            reason = "discrepancy"
    report.termination = reason
    report.wall_time = time.perf_counter() - t_start
    return ParameterMap.from_vector(vec, x0.omega, x0.is_complex), report


def _active_bounds(vec: np.ndarray, grad: np.ndarray, box: FeasibleBox) -> np.ndarray:
    """Unknowns sitting on a bound whose descent direction points out of the box."""
    lower, upper = box.bounds(vec.shape[1] == 4)
    return ((vec <= lower) & (grad < 0)) | ((vec >= upper) & (grad > 0))


def _floor_relaxation(vec: np.ndarray, lower: np.ndarray) -> np.ndarray:
    """Without the box, still keep T1 and T2 strictly positive so the model stays defined."""
    out = vec.copy()
    out[:, :2] = np.maximum(out[:, :2], lower[:2])
    return out


def solve_gauss_newton(x0: ParameterMap, D: KSpaceData, seq: PulseSequence,
                       mask: Optional[SamplingMask] = None, cfg: Optional[SolverConfig] = None,
                       callback: Optional[Callable] = None):
    """Projected Gauss-Newton: the L-M iteration with lambda_n = 0 for every n."""
    cfg = replace(cfg or SolverConfig(max_iters=5), lambda0=0.0, beta=0.0, epsilon=0.0)
    return solve_lm(x0, D, seq, mask, cfg, callback)


__all__ = [
    "SolverConfig", "SolveReport", "StepResult", "conjugate_gradient", "lm_step", "project_box",
    "solve_lm", "solve_gauss_newton",
]
