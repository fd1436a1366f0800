"""Parameter maps x = (rho, T1, T2) on an N x N grid and the feasible box."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ShapeMismatchError

REAL_CHANNELS = ("T1", "T2", "rho")
COMPLEX_CHANNELS = ("T1", "T2", "rho_re", "rho_im")


@dataclass
class ParameterMap:
    """Per-pixel T1, T2 (ms) and density rho on an effective domain ``omega``.

    A real-valued ``rho`` array means the density is modelled as real (3 unknowns per
    pixel); a complex dtype switches to 4 real unknowns (T1, T2, Re rho, Im rho).
    """

    t1: np.ndarray
    t2: np.ndarray
    rho: np.ndarray
    omega: Optional[np.ndarray] = None

    def __post_init__(self):
        self.t1 = np.asarray(self.t1, dtype=float)
        self.t2 = np.asarray(self.t2, dtype=float)
        rho = np.asarray(self.rho)
        self.rho = rho.astype(complex) if np.iscomplexobj(rho) else rho.astype(float)
        if self.omega is None:
            self.omega = self.rho != 0
        self.omega = np.asarray(self.omega, dtype=bool)
        shapes = {a.shape for a in (self.t1, self.t2, self.rho, self.omega)}
        if len(shapes) != 1:
            raise ShapeMismatchError(f"channel shapes differ: {shapes}")
        shape = self.t1.shape
        if len(shape) != 2 or shape[0] != shape[1]:
            raise ShapeMismatchError(f"maps must be square 2-D grids, got {shape}")

    @property
    def N(self) -> int:
        return self.t1.shape[0]

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.rho)

    @property
    def channel_names(self):
        return COMPLEX_CHANNELS if self.is_complex else REAL_CHANNELS

    def copy(self) -> "ParameterMap":
        return ParameterMap(self.t1.copy(), self.t2.copy(), self.rho.copy(), self.omega.copy())

    def to_vector(self, support=None) -> np.ndarray:
        """Stack the unknowns of the pixels in ``support`` (default omega) as a (P, C) real array."""
        idx = self.omega if support is None else np.asarray(support, dtype=bool)
        cols = [self.t1[idx], self.t2[idx], self.rho[idx].real]
        if self.is_complex:
            cols.append(self.rho[idx].imag)
        return np.stack(cols, axis=-1)

    @classmethod
    def from_vector(cls, vec, support, complex_rho: bool = False) -> "ParameterMap":
        support = np.asarray(support, dtype=bool)
        vec = np.asarray(vec, dtype=float)
        t1 = np.zeros(support.shape)
        t2 = np.zeros(support.shape)
        rho = np.zeros(support.shape, dtype=complex if complex_rho else float)
        t1[support] = vec[:, 0]
        t2[support] = vec[:, 1]
        rho[support] = vec[:, 2] + 1j * vec[:, 3] if complex_rho else vec[:, 2]
        return cls(t1, t2, rho, support.copy())

    def channels(self) -> dict:
        """Channel name -> N x N real grid."""
        out = {"T1": self.t1, "T2": self.t2}
        if self.is_complex:
            out["rho_re"] = self.rho.real
            out["rho_im"] = self.rho.imag
        else:
            out["rho"] = self.rho
        return out

    @classmethod
    def zeros(cls, N: int, complex_rho: bool = False) -> "ParameterMap":
        z = np.zeros((N, N))
        return cls(z, z.copy(), z.astype(complex) if complex_rho else z.copy(), np.zeros((N, N), bool))


@dataclass(frozen=True)
class FeasibleBox:
    """Per-channel bounds. Lower relaxation bounds of 0 are applied as ``positive_floor``
    because the Bloch recursion is undefined at T1 = 0 or T2 = 0."""

    t1: tuple = (0.0, 5500.0)
    t2: tuple = (0.0, 550.0)
    rho_re: tuple = (0.0, 100.0)
    rho_im: tuple = (0.0, 100.0)
    positive_floor: float = 1e-3

    def __post_init__(self):
        for name in ("t1", "t2", "rho_re", "rho_im"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"box channel {name}: lower bound {lo} must be < upper bound {hi}")

    def bounds(self, complex_rho: bool = False):
        chans = [self.t1, self.t2, self.rho_re] + ([self.rho_im] if complex_rho else [])
        lower = np.array([c[0] for c in chans], dtype=float)
        upper = np.array([c[1] for c in chans], dtype=float)
        lower[:2] = np.maximum(lower[:2], self.positive_floor)
        return lower, upper

    def clip(self, vec: np.ndarray) -> np.ndarray:
        lower, upper = self.bounds(vec.shape[-1] == 4)
        return np.clip(vec, lower, upper)

    def contains(self, vec: np.ndarray) -> bool:
        lower, upper = self.bounds(vec.shape[-1] == 4)
        return bool(np.all((vec >= lower) & (vec <= upper)))

    def to_dict(self) -> dict:
        return {"t1": list(self.t1), "t2": list(self.t2), "rho_re": list(self.rho_re),
                "rho_im": list(self.rho_im), "positive_floor": self.positive_floor}

    @classmethod
    def from_dict(cls, d: dict) -> "FeasibleBox":
        kw = {k: tuple(d[k]) for k in ("t1", "t2", "rho_re", "rho_im") if k in d}
        if "positive_floor" in d:
            kw["positive_floor"] = float(d["positive_floor"])
        return cls(**kw)
