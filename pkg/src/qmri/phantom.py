"""Synthetic ground truth: ellipse phantoms, 2x2 partial-volume shrinking and k-space synthesis."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bloch import MagnetizationFrames, PulseSequence, simulate_sequence
from .encoding import KSpaceData, QOperator, SamplingMask, dft2
from .errors import DomainError, ShapeMismatchError
from .maps import ParameterMap

DEFAULT_RANGES = {"t1": (530.0, 5012.0), "t2": (41.0, 512.0), "rho": (80.0, 100.0)}


@dataclass(frozen=True)
class Ellipse:
    """Region in normalised coordinates: x (columns) and y (rows) both span [-1, 1]."""

    center: tuple
    axes: tuple
    t1: float
    t2: float
    rho: complex
    angle: float = 0.0  # degrees, counter-clockwise

    def mask(self, N: int) -> np.ndarray:
        coords = (np.arange(N) + 0.5) / N * 2.0 - 1.0
        y, x = np.meshgrid(coords, coords, indexing="ij")
        a = np.deg2rad(self.angle)
        xs, ys = x - self.center[0], y - self.center[1]
        u = xs * np.cos(a) + ys * np.sin(a)
        v = -xs * np.sin(a) + ys * np.cos(a)
        return (u / self.axes[0]) ** 2 + (v / self.axes[1]) ** 2 <= 1.0

    def to_dict(self) -> dict:
        rho = complex(self.rho)
        return {"center": list(self.center), "axes": list(self.axes), "t1": self.t1, "t2": self.t2,
                "rho": rho.real if rho.imag == 0 else [rho.real, rho.imag], "angle": self.angle}

    @classmethod
    def from_dict(cls, d: dict) -> "Ellipse":
        rho = d["rho"]
        rho = complex(rho[0], rho[1]) if isinstance(rho, (list, tuple)) else float(rho)
        return cls(tuple(d["center"]), tuple(d["axes"]), float(d["t1"]), float(d["t2"]), rho,
                   float(d.get("angle", 0.0)))


@dataclass(frozen=True)
class PhantomSpec:
    N: int
    regions: tuple
    ranges: dict = field(default_factory=lambda: dict(DEFAULT_RANGES))

    def validate(self):
        if self.N < 1:
            raise ValueError("N must be positive")
        if not self.regions:
            raise ValueError("a phantom needs at least one region")
        lo_hi = self.ranges
        for i, r in enumerate(self.regions):
            rho = complex(r.rho)
            checks = [("t1", r.t1), ("t2", r.t2), ("rho", abs(rho) if rho.imag else rho.real)]
            for key, value in checks:
                lo, hi = lo_hi[key]
                if not lo <= value <= hi:
                    raise DomainError(f"region {i}: {key}={value} outside [{lo}, {hi}]")

    def to_dict(self) -> dict:
        return {"N": self.N, "regions": [r.to_dict() for r in self.regions],
                "ranges": {k: list(v) for k, v in self.ranges.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        ranges = {k: tuple(v) for k, v in d.get("ranges", DEFAULT_RANGES).items()}
        return cls(int(d["N"]), tuple(Ellipse.from_dict(r) for r in d["regions"]), ranges)


def make_phantom(spec: PhantomSpec) -> ParameterMap:
    spec.validate()
    N = spec.N
    is_complex = any(complex(r.rho).imag != 0 for r in spec.regions)
    t1 = np.zeros((N, N))
    t2 = np.zeros((N, N))
    rho = np.zeros((N, N), dtype=complex if is_complex else float)
    for r in spec.regions:
        m = r.mask(N)
        t1[m], t2[m] = r.t1, r.t2
        rho[m] = r.rho if is_complex else complex(r.rho).real
    return ParameterMap(t1, t2, rho, rho != 0)


def shrink_average(x: ParameterMap) -> ParameterMap:
    """Halve the resolution; each output pixel is the mean of the nonzero entries of its 2x2 block."""
    N = x.N
    if N % 2:
        raise ShapeMismatchError(f"shrink_average needs an even grid, got N={N}")

    def blocks(a):
        return a.reshape(N // 2, 2, N // 2, 2).swapaxes(1, 2).reshape(N // 2, N // 2, 4)

    def nz_mean(a):
        b = blocks(a)
        nz = b != 0
        count = nz.sum(axis=-1)
        total = np.where(nz, b, 0).sum(axis=-1)
        return np.where(count > 0, total / np.maximum(count, 1), 0)

    t1, t2 = nz_mean(x.t1), nz_mean(x.t2)
    if x.is_complex:
        rho = nz_mean(x.rho.real) + 1j * nz_mean(x.rho.imag)
    else:
        rho = nz_mean(x.rho)
    omega = (rho != 0) & (t1 > 0) & (t2 > 0)
    return ParameterMap(np.where(omega, t1, 0), np.where(omega, t2, 0), np.where(omega, rho, 0), omega)


def brain_regions(complex_offset: float | None = None) -> tuple:
    """Brain-like tissue layout with values inside the default physiological ranges.

    With ``complex_offset`` C the density becomes rho + i (C - rho).
    """
    base = [
        # (center, axes, angle, T1, T2, rho)
        ((0.0, 0.0), (0.70, 0.92), 0.0, 4880.0, 500.0, 100.0),    # outer CSF
        ((0.0, 0.0), (0.64, 0.86), 0.0, 1250.0, 95.0, 86.0),      # cortical grey matter
        ((0.0, 0.02), (0.52, 0.72), 0.0, 685.0, 65.0, 80.0),      # white matter
        ((-0.14, -0.12), (0.07, 0.24), 15.0, 4880.0, 500.0, 100.0),  # ventricles
        ((0.14, -0.12), (0.07, 0.24), -15.0, 4880.0, 500.0, 100.0),
        ((-0.22, 0.22), (0.10, 0.12), 0.0, 1100.0, 85.0, 88.0),   # deep grey nuclei
        ((0.22, 0.22), (0.10, 0.12), 0.0, 1100.0, 85.0, 88.0),
        ((0.32, -0.42), (0.07, 0.07), 0.0, 2000.0, 250.0, 92.0),  # lesions
        ((-0.30, 0.50), (0.05, 0.06), 0.0, 530.0, 41.0, 95.0),
        ((0.0, 0.62), (0.05, 0.04), 0.0, 5012.0, 512.0, 98.0),
    ]
    regions = []
    for center, axes, angle, t1, t2, rho in base:
        value = complex(rho, complex_offset - rho) if complex_offset is not None else rho
        regions.append(Ellipse(center, axes, t1, t2, value, angle))
    return tuple(regions)


def brain_phantom(N: int = 64, supersample: int = 2, complex_offset: float | None = None) -> ParameterMap:
    """Brain-like phantom rendered at ``N * supersample`` and shrunk by 2x2 averaging."""
    if supersample not in (1, 2, 4, 8):
        raise ValueError("supersample must be a power of two <= 8")
    ranges = dict(DEFAULT_RANGES)
    if complex_offset is not None:
        lo, hi = DEFAULT_RANGES["rho"]
        ranges["rho"] = (0.0, float(max(np.hypot(r, complex_offset - r) for r in (lo, hi))))
    x = make_phantom(PhantomSpec(N * supersample, brain_regions(complex_offset), ranges))
    while x.N > N:
        x = shrink_average(x)
    return x


def on_grid_regions() -> tuple:
    """Piecewise-constant regions whose (T1, T2) lie on the 200:200 x 20:20 coarse grid."""
    return (
        Ellipse((0.0, 0.0), (0.70, 0.90), 4800.0, 500.0, 100.0),
        Ellipse((0.0, 0.0), (0.60, 0.80), 1200.0, 100.0, 85.0),
        Ellipse((0.0, 0.05), (0.45, 0.60), 800.0, 60.0, 80.0),
        Ellipse((-0.2, -0.2), (0.12, 0.18), 2000.0, 240.0, 92.0),
        Ellipse((0.25, 0.3), (0.10, 0.10), 600.0, 80.0, 95.0),
    )


def on_grid_phantom(N: int = 32) -> ParameterMap:
    return make_phantom(PhantomSpec(N, on_grid_regions()))


def noise_generators(seed: int, L: int) -> list:
    """One independent PCG64 stream per frame, spawned from a single SeedSequence."""
    children = np.random.SeedSequence(seed).spawn(L)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def synthesize_data(x: ParameterMap, seq: PulseSequence, mask: SamplingMask, sigma: float = 0.0,
                    seed: int = 0):
    """Simulate rho T_xy M, add complex Gaussian noise (std ``sigma`` per real component) on
    the effective domain, then apply the masked DFT. Returns ``(KSpaceData, MagnetizationFrames)``
    where the frames cover the pixels of ``x.omega`` in row-major order."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if x.t1.shape != mask.frames.shape[1:]:
        raise ShapeMismatchError("map and mask grids differ")
    op = QOperator(seq, mask, x.omega, complex_rho=x.is_complex)
    vec = x.to_vector()
    images = op.images(vec)
    if sigma > 0:
        gens = noise_generators(seed, seq.L)
        P = op.n_pixels
        noise = np.stack([g.normal(0.0, sigma, P) + 1j * g.normal(0.0, sigma, P) for g in gens])
        images = images + op.scatter(noise)
    data = mask.apply(dft2(images))
    frames = simulate_sequence((vec[:, 0], vec[:, 1]), seq)
    return KSpaceData(data, mask, sigma=float(sigma), seed=int(seed)), frames


def snr(clean: KSpaceData, noisy: KSpaceData) -> float:
    """Power ratio ||clean D||^2 / ||noisy D - clean D||^2."""
    noise = np.linalg.norm(noisy.data - clean.data) ** 2
    return float(np.inf) if noise == 0 else float(np.linalg.norm(clean.data) ** 2 / noise)


def expected_snr(x: ParameterMap, seq: PulseSequence, mask: SamplingMask, sigma: float) -> float:
    """Expected value of the noise energy in :func:`snr`, used in its denominator.

    Image-domain noise on omega with std sigma per component spreads evenly over the unitary
    DFT bins, so its expected masked energy is 2 sigma^2 |omega| sum_l rate_l.
    """
    clean, _ = synthesize_data(x, seq, mask)
    noise = 2.0 * sigma**2 * x.omega.sum() * mask.frames.mean(axis=(1, 2)).sum()
    return float(np.inf) if noise == 0 else float(np.linalg.norm(clean.data) ** 2 / noise)


def sigma_for_snr(x: ParameterMap, seq: PulseSequence, mask: SamplingMask, target: float) -> float:
    """Noise std per real component whose expected SNR equals ``target``."""
    if target <= 0:
        raise ValueError("target SNR must be > 0")
    return float(np.sqrt(expected_snr(x, seq, mask, 1.0) / target))


__all__ = [
    "DEFAULT_RANGES", "Ellipse", "PhantomSpec", "make_phantom", "shrink_average", "brain_regions",
    "brain_phantom", "on_grid_regions", "on_grid_phantom", "synthesize_data", "snr", "expected_snr",
    "sigma_for_snr",
    "noise_generators", "MagnetizationFrames",
]
