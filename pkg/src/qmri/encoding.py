"""Fourier-space data model: unitary DFT, sampling masks and the qMRI operator with its Jacobian.

k-space arrays use numpy's unshifted FFT layout (DC at index [0, 0]). Cartesian masks pick
rows (axis 0) with 1-based row numbers; radial masks are rasterised on the centred grid
and shifted back into that layout.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bloch import PulseSequence, simulate_sequence, transverse, transverse_derivs
from .errors import CacheMismatchError, ShapeMismatchError
from .maps import ParameterMap


def _check_grid(x: np.ndarray):
    if x.ndim < 2 or x.shape[-1] != x.shape[-2]:
        raise ShapeMismatchError(f"expected square grids, got shape {x.shape}")
    n = x.shape[-1]
    if n < 1 or n & (n - 1):
        raise ShapeMismatchError(f"grid size {n} is not a power of two")


def dft2(image) -> np.ndarray:
    """Unitary 2-D DFT over the last two axes."""
    image = np.asarray(image)
    _check_grid(image)
    return np.fft.fft2(image, norm="ortho")


def idft2(kspace) -> np.ndarray:
    kspace = np.asarray(kspace)
    _check_grid(kspace)
    return np.fft.ifft2(kspace, norm="ortho")


# -- sampling ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplingMask:
    frames: np.ndarray
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=bool)
        if frames.ndim != 3 or frames.shape[1] != frames.shape[2]:
            raise ShapeMismatchError("mask frames must have shape (L, N, N)")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def L(self) -> int:
        return self.frames.shape[0]

    @property
    def N(self) -> int:
        return self.frames.shape[1]

    @property
    def is_full(self) -> bool:
        return bool(self.frames.all())

    @property
    def rate(self) -> float:
        return float(self.frames.mean())

    @property
    def factor(self) -> float:
        """Sub-sampling factor s (1 for full sampling)."""
        if "s" in self.descriptor and self.descriptor.get("kind") == "cartesian":
            return float(self.descriptor["s"])
        return 1.0 / self.rate if self.rate > 0 else np.inf

    def apply(self, kspace: np.ndarray) -> np.ndarray:
        return np.where(self.frames, kspace, 0)


def cartesian_mask(N: int, s: int, ell: int) -> list:
    """1-based k-space rows acquired in frame ``ell`` (1-based): {i : i mod s == ell mod s}."""
    if s < 1 or N % s:
        raise ValueError(f"s={s} must divide N={N}")
    xi = ell % s
    return [i for i in range(1, N + 1) if i % s == xi]


def cartesian_sampling(N: int, s: int, L: int) -> SamplingMask:
    frames = np.zeros((L, N, N), dtype=bool)
    for ell in range(1, L + 1):
        rows = np.asarray(cartesian_mask(N, s, ell)) - 1
        frames[ell - 1, rows, :] = True
    return SamplingMask(frames, {"kind": "cartesian", "N": N, "s": s, "L": L})


def _digital_line(N: int, angle: float) -> np.ndarray:
    """1-pixel line through the centre (N//2, N//2) of a centred grid, both half-lines."""
    c = N // 2
    t = np.arange(-N, N + 1)
    dx, dy = np.cos(angle), np.sin(angle)

    def rnd(v):
        return np.sign(v) * np.floor(np.abs(v) + 0.5)

    if abs(dx) >= abs(dy):
        cols, rows = c + t, c + rnd(t * dy / dx)
    else:
        rows, cols = c + t, c + rnd(t * dx / dy)
    rows, cols = rows.astype(int), cols.astype(int)
    ok = (rows >= 0) & (rows < N) & (cols >= 0) & (cols < N)
    grid = np.zeros((N, N), dtype=bool)
    grid[rows[ok], cols[ok]] = True
    return grid


def radial_angles(p: int, s: int, ell: int) -> np.ndarray:
    """Angle indices ((k p/s + ell - 1) mod p) * pi/p for k = 0..s-1."""
    step = p / s
    idx = np.mod(np.floor(np.arange(s) * step).astype(int) + (ell - 1), p)
    return idx * np.pi / p


def radial_mask(N: int, p: int, s: int, ell: int) -> np.ndarray:
    """Boolean N x N mask (unshifted FFT layout) of the s radial strips of frame ``ell``."""
    if not p >= s >= 1:
        raise ValueError("need p >= s >= 1")
    grid = np.zeros((N, N), dtype=bool)
    for angle in radial_angles(p, s, ell):
        grid |= _digital_line(N, angle)
    return np.fft.ifftshift(grid)


def radial_sampling(N: int, p: int, s: int, L: int) -> SamplingMask:
    frames = np.stack([radial_mask(N, p, s, ell) for ell in range(1, L + 1)])
    return SamplingMask(frames, {"kind": "radial", "N": N, "p": p, "s": s, "L": L})


def full_sampling(N: int, L: int) -> SamplingMask:
    return SamplingMask(np.ones((L, N, N), dtype=bool), {"kind": "full", "N": N, "L": L})


def mask_from_descriptor(desc: dict) -> SamplingMask:
    kind = desc.get("kind")
    if kind == "cartesian":
        return cartesian_sampling(int(desc["N"]), int(desc["s"]), int(desc["L"]))
    if kind == "radial":
        return radial_sampling(int(desc["N"]), int(desc["p"]), int(desc["s"]), int(desc["L"]))
    if kind == "full":
        return full_sampling(int(desc["N"]), int(desc["L"]))
    raise ValueError(f"unknown mask kind {kind!r}")


@dataclass(frozen=True)
class KSpaceData:
    data: np.ndarray
    mask: SamplingMask
    sigma: Optional[float] = None
    seed: Optional[int] = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        if data.shape != self.mask.frames.shape:
            raise ShapeMismatchError(f"data shape {data.shape} != mask shape {self.mask.frames.shape}")
        if np.any(data[~self.mask.frames] != 0):
            data = self.mask.apply(data)
        object.__setattr__(self, "data", data)

    @property
    def L(self) -> int:
        return self.data.shape[0]

    @property
    def N(self) -> int:
        return self.data.shape[1]

    def zero_filled(self) -> np.ndarray:
        """F^{-1} P^T D per frame."""
        return idft2(self.data)


# -- the qMRI operator ------------------------------------------------------------------

def _theta_fingerprint(vec: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(vec[:, :2]).tobytes()).hexdigest()


class QOperator:
    """Q(x) = P F(rho T_xy M(theta)) acting on the unknowns of the pixels in ``support``.

    Unknown vectors have shape (P, C) with channels (T1, T2, Re rho[, Im rho]).
    """

    def __init__(self, seq: PulseSequence, mask: SamplingMask, support, complex_rho: bool = False):
        support = np.asarray(support, dtype=bool)
        if seq.L != mask.L:
            raise ShapeMismatchError(f"sequence length {seq.L} != mask frames {mask.L}")
        if support.shape != mask.frames.shape[1:]:
            raise ShapeMismatchError("support and mask grids differ")
        self.seq = seq
        self.mask = mask
        self.support = support
        self.complex_rho = complex_rho
        self._flat_idx = np.flatnonzero(support)

    @property
    def n_channels(self) -> int:
        return 4 if self.complex_rho else 3

    @property
    def n_pixels(self) -> int:
        return self._flat_idx.size

    @property
    def N(self) -> int:
        return self.mask.N

    @property
    def L(self) -> int:
        return self.mask.L

    def rho(self, vec) -> np.ndarray:
        return vec[:, 2] + 1j * vec[:, 3] if self.complex_rho else vec[:, 2].astype(complex)

    def scatter(self, values: np.ndarray) -> np.ndarray:
        """(L, P) pixel values -> (L, N, N) images, zero off the support."""
        img = np.zeros((values.shape[0], self.N * self.N), dtype=complex)
        img[:, self._flat_idx] = values
        return img.reshape(-1, self.N, self.N)

    def gather(self, images: np.ndarray) -> np.ndarray:
        return images.reshape(images.shape[0], -1)[:, self._flat_idx]

    def images(self, vec) -> np.ndarray:
        """Clean transverse images rho T_xy M_l(theta), shape (L, N, N)."""
        fr = simulate_sequence((vec[:, 0], vec[:, 1]), self.seq)
        return self.scatter(transverse(fr) * self.rho(vec))

    def forward(self, vec) -> np.ndarray:
        return self.mask.apply(dft2(self.images(vec)))

    def linearize(self, vec) -> "Linearization":
        return Linearization(self, vec)


class Linearization:
    """Q(x) and Q'(x) at a fixed point x; the derivative frames are computed once."""

    def __init__(self, op: QOperator, vec):
        self.op = op
        self.vec = np.array(vec, dtype=float)
        self.fingerprint = _theta_fingerprint(self.vec)
        fr = simulate_sequence((self.vec[:, 0], self.vec[:, 1]), op.seq, with_derivs=True)
        m = transverse(fr)                      # (L, P)
        dm = transverse_derivs(fr)              # (L, P, 2)
        rho = op.rho(self.vec)
        cols = [rho * dm[..., 0], rho * dm[..., 1], m.astype(complex)]
        if op.complex_rho:
            cols.append(1j * m)
        self.columns = np.stack(cols)           # (C, L, P): image-domain response per unknown
        self.clean = m * rho
        self._forward = None

    def check(self, vec):
        if _theta_fingerprint(np.asarray(vec, dtype=float)) != self.fingerprint:
            raise CacheMismatchError("linearization was built at a different theta map")

    def forward(self) -> np.ndarray:
        if self._forward is None:
            self._forward = self.op.mask.apply(dft2(self.op.scatter(self.clean)))
        return self._forward

    def apply(self, h: np.ndarray) -> np.ndarray:
        """Q'(x) h as masked k-space frames (L, N, N)."""
        pix = np.einsum("clp,pc->lp", self.columns, h.astype(complex))
        return self.op.mask.apply(dft2(self.op.scatter(pix)))

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        """Q'(x)^T y under the real inner product Re<u, v>; returns (P, C)."""
        z = self.op.gather(idft2(self.op.mask.apply(y)))
        return np.einsum("clp,lp->pc", self.columns.conj(), z).real

    def normal(self, h: np.ndarray, damping: float = 0.0) -> np.ndarray:
        return self.adjoint(self.apply(h)) + damping * h

    def gram_blocks(self) -> np.ndarray:
        """Per-pixel (C, C) blocks of Q'^T Q'; exact only under full sampling."""
        c = self.columns
        return np.einsum("ilp,jlp->pij", c.conj(), c).real


# -- spec-level wrappers on ParameterMap ----------------------------------------------

def _operator_for(x: ParameterMap, seq: PulseSequence, mask: SamplingMask) -> QOperator:
    if x.t1.shape != mask.frames.shape[1:]:
        raise ShapeMismatchError(f"map grid {x.t1.shape} != mask grid {mask.frames.shape[1:]}")
    return QOperator(seq, mask, x.omega, complex_rho=x.is_complex)


def forward_Q(x: ParameterMap, seq: PulseSequence, mask: SamplingMask) -> KSpaceData:
    op = _operator_for(x, seq, mask)
    return KSpaceData(op.forward(x.to_vector()), mask)


def linearize(x: ParameterMap, seq: PulseSequence, mask: SamplingMask) -> Linearization:
    return _operator_for(x, seq, mask).linearize(x.to_vector())


def jacobian_apply(x: ParameterMap, h: ParameterMap, cache: Linearization) -> KSpaceData:
    """Q'(x) h where ``h`` carries the perturbations in its t1, t2 and rho grids."""
    cache.check(x.to_vector())
    vec = h.to_vector(cache.op.support)
    if cache.op.complex_rho and vec.shape[1] == 3:
        vec = np.column_stack([vec, np.zeros(len(vec))])
    return KSpaceData(cache.apply(vec[:, :cache.op.n_channels]), cache.op.mask)


def jacobian_adjoint_apply(x: ParameterMap, residual: KSpaceData, cache: Linearization) -> ParameterMap:
    cache.check(x.to_vector())
    vec = cache.adjoint(residual.data)
    return ParameterMap.from_vector(vec, cache.op.support, complex_rho=cache.op.complex_rho)
