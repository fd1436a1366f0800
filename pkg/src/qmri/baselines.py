"""Two-step MRF matching and the projected-Landweber (BLIP) reconstruction."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dictionary import Dictionary, match, project_trajectories
from .encoding import KSpaceData, dft2, idft2
from .errors import ShapeMismatchError
from .maps import ParameterMap


def _check_lengths(D: KSpaceData, dic: Dictionary):
    if dic.L != D.L:
        raise ShapeMismatchError(f"dictionary length {dic.L} != number of frames {D.L}")


def _support(D: KSpaceData, support) -> np.ndarray:
    if support is None:
        return np.ones((D.N, D.N), dtype=bool)
    support = np.asarray(support, dtype=bool)
    if support.shape != (D.N, D.N):
        raise ShapeMismatchError(f"support shape {support.shape} != grid {(D.N, D.N)}")
    return support


def _lookup(idx: np.ndarray, rho: np.ndarray, dic: Dictionary, support: np.ndarray,
            complex_rho: bool) -> ParameterMap:
    """Turn per-pixel atom indices into maps; unmatched pixels stay at zero."""
    N = support.shape[0]
    t1 = np.zeros((N, N))
    t2 = np.zeros((N, N))
    rmap = np.zeros((N, N), dtype=complex if complex_rho else float)
    flat = np.flatnonzero(support)
    hit = idx >= 0
    pix = np.unravel_index(flat[hit], (N, N))
    t1[pix] = dic.t1[idx[hit]]
    t2[pix] = dic.t2[idx[hit]]
    rmap[pix] = rho[hit]
    omega = np.zeros((N, N), dtype=bool)
    omega[pix] = True
    return ParameterMap(t1, t2, rmap, omega)


def mrf_reconstruct(D: KSpaceData, dic: Dictionary, support=None, complex_rho: bool = False) -> ParameterMap:
    """Zero-filled inverse DFT per frame, then per-pixel dictionary matching on ``support``."""
    _check_lengths(D, dic)
    support = _support(D, support)
    X = D.zero_filled().reshape(D.L, -1)[:, np.flatnonzero(support)].T   # (P, L)
    idx, rho = match(X, dic, complex_rho)
    return _lookup(idx, rho, dic, support, complex_rho)


@dataclass
class BlipConfig:
    dictionary: Optional[Dictionary] = field(default=None, repr=False)
    iterations: int = 20
    step: Optional[float] = None          # None -> sub-sampling factor s
    step_rule: str = "backtracking"       # or "constant"; backtracking halves mu while the residual grows
    max_halvings: int = 10
    complex_rho: bool = False
    density: str = "norm"                 # or "projection": rho = max(Re<f_j, X_i>, 0) / norm_j
    keep_history: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.step is not None and self.step < 0:
            raise ValueError("step must be >= 0")
        if self.step_rule not in ("constant", "backtracking"):
            raise ValueError(f"unknown step_rule {self.step_rule!r}")


@dataclass
class BlipResult:
    map: ParameterMap
    X: np.ndarray                      # final projected magnetisation images (L, N, N)
    residuals: list                    # ||P F X_n - D|| after each sweep
    steps: list                        # step size used in each sweep
    history: list = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "residual", "step"])
            for n, (r, mu) in enumerate(zip(self.residuals, self.steps), start=1):
                w.writerow([n, repr(float(r)), repr(float(mu))])


def blip_reconstruct(D: KSpaceData, cfg: BlipConfig, support=None) -> BlipResult:
    """Projected Landweber: X <- X - mu F^-1 P^T (P F X - D), then project each pixel
    trajectory onto the scaled dictionary atoms; starts from X = 0."""
    dic = cfg.dictionary
    if dic is None:
        raise ValueError("BlipConfig.dictionary is required")
    _check_lengths(D, dic)
    support = _support(D, support)
    mask = D.mask
    flat = np.flatnonzero(support)
    L, N = D.L, D.N
    mu = float(mask.factor if cfg.step is None else cfg.step)

    def project(Y):
        traj = Y.reshape(L, -1)[:, flat].T
        proj, idx, rho = project_trajectories(traj, dic, cfg.complex_rho, cfg.density)
        out = np.zeros((L, N * N), dtype=complex)
        out[:, flat] = proj.T
        return out.reshape(L, N, N), idx, rho

    def residual(X):
        return float(np.linalg.norm(mask.apply(dft2(X)) - D.data))

    X = np.zeros((L, N, N), dtype=complex)
    res = residual(X)
    idx = np.full(flat.size, -1)
    rho = np.zeros(flat.size, dtype=complex if cfg.complex_rho else float)
    residuals, steps, history = [], [], []
    for _ in range(cfg.iterations):
        grad = idft2(mask.apply(dft2(X)) - D.data)
        trial_mu = mu
        for _ in range(cfg.max_halvings + 1):
            Xn, idx_n, rho_n = project(X - trial_mu * grad)
            res_n = residual(Xn)
            if cfg.step_rule == "constant" or res_n <= res:
                break
            trial_mu *= 0.5
        X, idx, rho, res = Xn, idx_n, rho_n, res_n
        if cfg.step_rule == "backtracking":
            mu = trial_mu
        residuals.append(res)
        steps.append(trial_mu)
        if cfg.keep_history:
            history.append(X.copy())
    return BlipResult(_lookup(idx, rho, dic, support, cfg.complex_rho), X, residuals, steps, history)


__all__ = ["mrf_reconstruct", "BlipConfig", "BlipResult", "blip_reconstruct"]
