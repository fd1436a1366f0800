"""Input checks shared by the estimators and the command line."""
from __future__ import annotations

import numpy as np

from .bloch import PulseSequence
from .encoding import KSpaceData
from .errors import DomainError, ShapeMismatchError
from .maps import FeasibleBox, ParameterMap


def check_sequence(seq: PulseSequence, strict: bool = True) -> PulseSequence:
    """Reconstruction needs flip angles strictly inside (0, pi)."""
    if not isinstance(seq, PulseSequence):
        raise TypeError(f"expected a PulseSequence, got {type(seq).__name__}")
    if strict and not seq.in_open_flip_range():
        raise DomainError("flip angles must lie in the open interval (0, pi)")
    return seq


def check_kspace(D, seq: PulseSequence | None = None) -> KSpaceData:
    if not isinstance(D, KSpaceData):
        raise TypeError(f"expected KSpaceData, got {type(D).__name__}")
    if not np.all(np.isfinite(D.data)):
        raise ValueError("k-space data contains non-finite values")
    if seq is not None and seq.L != D.L:
        raise ShapeMismatchError(f"sequence has L={seq.L} pulses but the data have {D.L} frames")
    return D


def check_map(x, N: int | None = None, box: FeasibleBox | None = None) -> ParameterMap:
    if not isinstance(x, ParameterMap):
        raise TypeError(f"expected ParameterMap, got {type(x).__name__}")
    if N is not None and x.N != N:
        raise ShapeMismatchError(f"map grid N={x.N} != data grid N={N}")
    vec = x.to_vector()
    if not np.all(np.isfinite(vec)):
        raise ValueError("parameter map contains non-finite values on omega")
    if np.any(vec[:, :2] <= 0):
        raise DomainError("T1 and T2 must be > 0 on omega")
    if box is not None and not box.contains(vec):
        raise DomainError("parameter map leaves the feasible box")
    return x


def check_support(support, N: int) -> np.ndarray:
    if support is None:
        return np.ones((N, N), dtype=bool)
    support = np.asarray(support, dtype=bool)
    if support.shape != (N, N):
        raise ShapeMismatchError(f"support shape {support.shape} != grid {(N, N)}")
    return support


__all__ = ["check_sequence", "check_kspace", "check_map", "check_support"]
