"""Discrete IR-bSSFP Bloch dynamics, parameter derivatives and continuous closed forms.

Times are in milliseconds and angles in radians throughout. Tissue parameters may be
scalars or arrays of any shape; the recursion is vectorised over that shape.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import DegenerateTrajectoryError, DomainError

M_EQ = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class PulseSequence:
    flip_angles: np.ndarray
    repetition_times: np.ndarray
    phase_shifts: np.ndarray
    initial_state: np.ndarray = field(default_factory=lambda: -M_EQ.copy())
    equilibrium: np.ndarray = field(default_factory=lambda: M_EQ.copy())

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.flip_angles, dtype=float))
        tr = np.atleast_1d(np.asarray(self.repetition_times, dtype=float))
        phi = np.atleast_1d(np.asarray(self.phase_shifts, dtype=float))
        if not (alpha.ndim == tr.ndim == phi.ndim == 1 and alpha.size == tr.size == phi.size):
            raise ValueError("flip_angles, repetition_times and phase_shifts must be 1-D of equal length")
        if alpha.size == 0:
            raise ValueError("a pulse sequence needs at least one pulse")
        if not np.all(np.isfinite(alpha)) or not np.all(np.isfinite(phi)):
            raise ValueError("flip angles and phase shifts must be finite")
        if not np.all(np.isfinite(tr)) or np.any(tr <= 0):
            raise DomainError("repetition times must be finite and > 0")
        m0 = np.asarray(self.initial_state, dtype=float).reshape(3)
        me = np.asarray(self.equilibrium, dtype=float).reshape(3)
        for name, value in (("flip_angles", alpha), ("repetition_times", tr), ("phase_shifts", phi),
                            ("initial_state", m0), ("equilibrium", me)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @classmethod
    def constant(cls, L: int, alpha: float, TR: float, phi: float = 0.0, **kwargs) -> "PulseSequence":
        return cls(np.full(L, alpha), np.full(L, TR), np.full(L, phi), **kwargs)

    @property
    def L(self) -> int:
        return self.flip_angles.size

    def in_open_flip_range(self) -> bool:
        return bool(np.all((self.flip_angles > 0) & (self.flip_angles < np.pi)))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.flip_angles, self.repetition_times, self.phase_shifts,
                    self.initial_state, self.equilibrium):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "flip_angles": self.flip_angles.tolist(),
            "repetition_times": self.repetition_times.tolist(),
            "phase_shifts": self.phase_shifts.tolist(),
            "initial_state": self.initial_state.tolist(),
            "equilibrium": self.equilibrium.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PulseSequence":
        kw = {k: d[k] for k in ("initial_state", "equilibrium") if k in d}
        return cls(d["flip_angles"], d["repetition_times"], d["phase_shifts"], **kw)


class TissueParams(NamedTuple):
    T1: float
    T2: float

    def rates(self) -> np.ndarray:
        """Relaxation-rate vector (1/T2, 1/T2, 1/T1)."""
        return np.array([1.0 / self.T2, 1.0 / self.T2, 1.0 / self.T1])


@dataclass(frozen=True)
class MagnetizationFrames:
    """``frames[l, ..., :]`` is M_{l+1}; ``derivs[l, ..., :, k]`` is dM/dT1 (k=0) or dM/dT2 (k=1)."""

    frames: np.ndarray
    derivs: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.derivs is not None and self.derivs.shape[:-1] != self.frames.shape:
            raise ValueError("frames and derivs must have identical leading shape")

    @property
    def L(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class ContinuousBlochSetup:
    omega0: float
    theta: TissueParams
    alpha: float = 0.0
    m0: np.ndarray = field(default_factory=lambda: -M_EQ.copy())

    def __post_init__(self):
        if not np.isfinite(self.omega0):
            raise ValueError("omega0 must be finite")
        _check_positive(self.theta.T1, self.theta.T2)
        object.__setattr__(self, "m0", np.asarray(self.m0, dtype=float).reshape(3))


def _check_positive(*values):
    for v in values:
        v = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise DomainError("relaxation times and repetition times must be finite and > 0")


def rotation_matrix(alpha: float, phi: float = 0.0) -> np.ndarray:
    """R_phi R_x(alpha) R_phi^T."""
    ca, sa = np.cos(alpha), np.sin(alpha)
    cp, sp = np.cos(phi), np.sin(phi)
    r_phi = np.array([[cp, sp, 0.0], [-sp, cp, 0.0], [0.0, 0.0, 1.0]])
    r_x = np.array([[1.0, 0.0, 0.0], [0.0, ca, sa], [0.0, -sa, ca]])
    return r_phi @ r_x @ r_phi.T


def relaxation_factors(TR, theta):
    """Return ``(e2, e1_diag)`` with e1_diag = (e^{-TR/T2}, e^{-TR/T2}, e^{-TR/T1}) stacked on the last axis."""
    T1, T2 = theta
    _check_positive(TR, T1, T2)
    TR, T1, T2 = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (TR, T1, T2)))
    et2 = np.exp(-TR / T2)
    et1 = np.exp(-TR / T1)
    return 1.0 - et1, np.stack([et2, et2, et1], axis=-1)


def simulate_sequence(theta, seq: PulseSequence, with_derivs: bool = False) -> MagnetizationFrames:
    """Run the IR-bSSFP recursion M_l = E1 R(alpha_l) M_{l-1} + E2 M_e.

    With ``with_derivs`` the forward-mode derivative recursion is carried along, seeded
    with dM_0 = 0 so that the first step reproduces the closed form for M'_1.
    ``theta`` is a TissueParams or any (T1, T2) pair of broadcastable arrays.
    """
    T1, T2 = theta
    _check_positive(T1, T2)
    T1, T2 = np.broadcast_arrays(np.asarray(T1, dtype=float), np.asarray(T2, dtype=float))
    shape = T1.shape
    m = np.broadcast_to(seq.initial_state, shape + (3,)).copy()
    me = seq.equilibrium
    frames = np.empty((seq.L,) + shape + (3,))
    derivs = np.empty((seq.L,) + shape + (3, 2)) if with_derivs else None
    d1 = np.zeros(shape + (3,))
    d2 = np.zeros(shape + (3,))

    for ell in range(seq.L):
        tr = seq.repetition_times[ell]
        rot = rotation_matrix(seq.flip_angles[ell], seq.phase_shifts[ell])
        et1 = np.exp(-tr / T1)
        et2 = np.exp(-tr / T2)
        rm = m @ rot.T
        new = np.empty_like(m)
        new[..., 0] = et2 * rm[..., 0]
        new[..., 1] = et2 * rm[..., 1]
        new[..., 2] = et1 * rm[..., 2]
        new += (1.0 - et1)[..., None] * me

        if with_derivs:
            g1 = tr / T1**2 * et1  # d/dT1 of e^{-TR/T1}
            g2 = tr / T2**2 * et2
            rd1 = d1 @ rot.T
            rd2 = d2 @ rot.T
            n1 = np.empty_like(d1)
            n1[..., 0] = et2 * rd1[..., 0]
            n1[..., 1] = et2 * rd1[..., 1]
            n1[..., 2] = et1 * rd1[..., 2] + g1 * rm[..., 2]
            n1 -= g1[..., None] * me
            n2 = np.empty_like(d2)
            n2[..., 0] = et2 * rd2[..., 0] + g2 * rm[..., 0]
            n2[..., 1] = et2 * rd2[..., 1] + g2 * rm[..., 1]
            n2[..., 2] = et1 * rd2[..., 2]
            d1, d2 = n1, n2
            derivs[ell, ..., 0] = d1
            derivs[ell, ..., 1] = d2

        m = new
        frames[ell] = m

    return MagnetizationFrames(frames, derivs)


def transverse(frames) -> np.ndarray:
    """m_x + i m_y for every frame (accepts MagnetizationFrames or a raw (..., 3) array)."""
    arr = frames.frames if isinstance(frames, MagnetizationFrames) else np.asarray(frames)
    if arr.size == 0:
        raise ValueError("no frames")
    return arr[..., 0] + 1j * arr[..., 1]


def transverse_derivs(frames: MagnetizationFrames) -> np.ndarray:
    """Transverse part of the derivative frames, shape (L, ..., 2)."""
    if frames.derivs is None:
        raise ValueError("frames were simulated without derivatives")
    return frames.derivs[..., 0, :] + 1j * frames.derivs[..., 1, :]


def precession_matrix(omega0: float, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    c, s = np.cos(omega0 * t), np.sin(omega0 * t)
    out = np.zeros(t.shape + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 1] = s
    out[..., 1, 0] = -s
    out[..., 1, 1] = c
    out[..., 2, 2] = 1.0
    return out


CLOSED_FORM_CASES = ("free_precession", "relaxation", "excitation_only", "excitation_relaxation")


def closed_form_solution(setup: ContinuousBlochSetup, case: str, t) -> np.ndarray:
    """Continuous Bloch solution m(t) in the lab frame for the four textbook cases.

    The excitation cases model an instantaneous pulse of angle ``setup.alpha`` about x at t=0.
    """
    if case not in CLOSED_FORM_CASES:
        raise ValueError(f"unknown case {case!r}; expected one of {CLOSED_FORM_CASES}")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    m0 = setup.m0
    if case.startswith("excitation"):
        m0 = rotation_matrix(setup.alpha, 0.0) @ m0
    prec = precession_matrix(setup.omega0, t)
    if case in ("free_precession", "excitation_only"):
        return prec @ m0
    T1, T2 = setup.theta
    decay = np.stack(np.broadcast_arrays(np.exp(-t / T2), np.exp(-t / T2), np.exp(-t / T1)), axis=-1)
    return prec @ m0 * decay + (1.0 - np.exp(-t / T1))[..., None] * M_EQ


def invert_from_trajectory(samples, t, b_field, gamma: float = 1.0, tol: float = 1e-12):
    """Recover the relaxation rates from a sampled trajectory by integrating the Bloch equations.

    Returns ``(rates, TissueParams)`` with rates = (1/T2, 1/T2, 1/T1). Integrals use the
    composite trapezoid rule on the given sample times.
    """
    m = np.asarray(samples, dtype=float)
    t = np.asarray(t, dtype=float)
    if m.ndim != 2 or m.shape[1] != 3 or m.shape[0] != t.size:
        raise ValueError("samples must have shape (len(t), 3)")
    gb = gamma * np.asarray(b_field, dtype=float).reshape(3)
    tau = t[-1] - t[0]
    omega = np.trapezoid(m, t, axis=0) - M_EQ * tau
    if np.any(np.abs(omega) < tol):
        raise DegenerateTrajectoryError(f"integrated deviation from equilibrium too small: {omega}")
    torque = np.trapezoid(np.cross(m, gb), t, axis=0)
    rates = (m[0] - m[-1] + torque) / omega
    return rates, TissueParams(T1=1.0 / rates[2], T2=1.0 / rates[0])
