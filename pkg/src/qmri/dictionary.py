"""Fingerprint dictionaries over a (T1, T2) grid and nearest-fingerprint matching."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bloch import PulseSequence, TissueParams, simulate_sequence, transverse
from .errors import DomainError, ShapeMismatchError

# Upper bound on the number of score entries evaluated at once during matching.
_SCORE_BLOCK = 1 << 24


def grid_range(start: float, stop: float, step: float) -> np.ndarray:
    """Inclusive ``start:step:stop`` grid, robust to floating-point step accumulation."""
    if step <= 0:
        raise ValueError("step must be > 0")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(max(n, 0))


@dataclass(frozen=True)
class Dictionary:
    """J atoms in T1-outer order; ``atoms`` is the (J, L) matrix of unit-norm fingerprints."""

    t1: np.ndarray
    t2: np.ndarray
    atoms: np.ndarray
    norms: np.ndarray
    grid: dict = field(default_factory=dict)
    seq_hash: str = ""
    _stacked: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def J(self) -> int:
        return self.atoms.shape[0]

    @property
    def L(self) -> int:
        return self.atoms.shape[1]

    def theta(self, j: int) -> TissueParams:
        return TissueParams(float(self.t1[j]), float(self.t2[j]))

    def raw_atom(self, j: int) -> np.ndarray:
        """Un-normalised transverse trajectory T_xy m^{theta_j}."""
        return self.atoms[j] * self.norms[j]

    def stacked_real(self) -> np.ndarray:
        """[Re atoms, Im atoms] as a (J, 2L) real matrix, so Re<f, X> is one real GEMM."""
        if self._stacked is None:
            object.__setattr__(self, "_stacked", np.hstack([self.atoms.real, self.atoms.imag]))
        return self._stacked


def build_dictionary(t1_grid, t2_grid, seq: PulseSequence) -> Dictionary:
    t1_grid = np.asarray(t1_grid, dtype=float).ravel()
    t2_grid = np.asarray(t2_grid, dtype=float).ravel()
    if t1_grid.size == 0 or t2_grid.size == 0:
        raise ValueError("dictionary grids must be non-empty")
    if np.any(t1_grid <= 0) or np.any(t2_grid <= 0) or not (
            np.all(np.isfinite(t1_grid)) and np.all(np.isfinite(t2_grid))):
        raise DomainError("dictionary grid values must be finite and > 0")
    t1, t2 = (a.ravel() for a in np.meshgrid(t1_grid, t2_grid, indexing="ij"))
    traj = transverse(simulate_sequence((t1, t2), seq)).T  # (J, L)
    norms = np.linalg.norm(traj, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    atoms = traj / safe[:, None]
    grid = {"t1": _describe(t1_grid), "t2": _describe(t2_grid)}
    return Dictionary(t1, t2, atoms, norms, grid, seq.fingerprint())


def _describe(values: np.ndarray) -> dict:
    d = {"min": float(values[0]), "max": float(values[-1]), "count": int(values.size)}
    if values.size > 1:
        steps = np.diff(values)
        if np.allclose(steps, steps[0]):
            d["step"] = float(steps[0])
    return d


def match(X: np.ndarray, dic: Dictionary, complex_rho: bool = False, chunk: Optional[int] = None,
          density: str = "norm", zero_tol: float = 1e-12):
    """Match many trajectories at once.

    ``X`` has shape (P, L). Returns ``(index, rho)``; pixels whose trajectory norm is at most
    ``zero_tol`` times the largest one (round-off from a zero-filled background) get index -1
    and rho 0. For real densities the score is Re<f_j, X>, and rho = |X| / norm_j;
    for complex densities the score is |<f_j, X>| and rho = <f_j, X> / norm_j.

    ``density="projection"`` uses the least-squares coefficient max(Re<f_j, X>, 0) / norm_j for
    real densities instead, which makes the rescaled atom the orthogonal projection of X onto
    the cone spanned by the matched fingerprint.
    """
    if density not in ("norm", "projection"):
        raise ValueError(f"unknown density rule {density!r}")
    X = np.asarray(X, dtype=complex)
    if X.ndim != 2 or X.shape[1] != dic.L:
        raise ShapeMismatchError(f"trajectories of length {X.shape[-1]} vs dictionary length {dic.L}")
    P = X.shape[0]
    index = np.full(P, -1, dtype=int)
    rho = np.zeros(P, dtype=complex if complex_rho else float)
    xnorm = np.linalg.norm(X, axis=1)
    live = np.flatnonzero(xnorm > zero_tol * xnorm.max()) if P else np.zeros(0, dtype=int)
    if chunk is None:
        chunk = max(1, _SCORE_BLOCK // max(dic.J, 1))
    stacked = None if complex_rho else dic.stacked_real()
    for start in range(0, live.size, chunk):
        sel = live[start:start + chunk]
        if complex_rho:
            inner = dic.atoms.conj() @ X[sel].T            # (J, p)
            best = np.argmax(np.abs(inner), axis=0)
            coef = inner[best, np.arange(sel.size)]
            rho[sel] = coef / dic.norms[best]
        else:
            xs = np.vstack([X[sel].real.T, X[sel].imag.T])  # (2L, p)
            score = stacked @ xs
            best = np.argmax(score, axis=0)
            if density == "projection":
                rho[sel] = np.maximum(score[best, np.arange(sel.size)], 0.0) / dic.norms[best]
            else:
                rho[sel] = xnorm[sel] / dic.norms[best]
        index[sel] = best
    return index, rho


def match_pixel(trajectory, dic: Dictionary, complex_rho: bool = False):
    """Single-trajectory matching; returns ``(theta, rho, atom_index)`` or ``(None, 0, None)``."""
    idx, rho = match(np.asarray(trajectory)[None, :], dic, complex_rho)
    if idx[0] < 0:
        return None, 0.0, None
    return dic.theta(idx[0]), rho[0], int(idx[0])


def project_trajectories(X: np.ndarray, dic: Dictionary, complex_rho: bool = False,
                         density: str = "projection"):
    """Replace each trajectory by rho_i * T_xy m^{theta_j_i}; returns ``(projected, index, rho)``."""
    idx, rho = match(X, dic, complex_rho, density=density)
    out = np.zeros_like(X, dtype=complex)
    hit = idx >= 0
    out[hit] = (rho[hit] * dic.norms[idx[hit]])[:, None] * dic.atoms[idx[hit]]
    return out, idx, rho
