"""On-disk formats: k-space blobs with JSON sidecars, dictionaries, and per-channel map CSVs."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import __version__
from .dictionary import Dictionary
from .encoding import KSpaceData, mask_from_descriptor
from .errors import ShapeMismatchError
from .maps import ParameterMap

FORMAT_VERSION = 1


def _paths(prefix):
    prefix = Path(prefix)
    return prefix.with_suffix(".bin"), prefix.with_suffix(".json")


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


# -- k-space -----------------------------------------------------------------------------

def save_kspace(prefix, D: KSpaceData):
    """Little-endian (re, im) float64 pairs, frame-major then row-major, plus a JSON sidecar."""
    if not D.mask.descriptor:
        raise ValueError("only masks with a descriptor can be saved")
    blob, side = _paths(prefix)
    blob.write_bytes(np.ascontiguousarray(D.data, dtype="<c16").tobytes())
    write_json(side, {"N": D.N, "L": D.L, "mask": D.mask.descriptor, "sigma": D.sigma, "seed": D.seed,
                      "version": FORMAT_VERSION, "package_version": __version__})
    return blob, side


def load_kspace(prefix) -> KSpaceData:
    blob, side = _paths(prefix)
    meta = read_json(side)
    mask = mask_from_descriptor(meta["mask"])
    data = np.frombuffer(blob.read_bytes(), dtype="<c16")
    expected = meta["L"] * meta["N"] ** 2
    if data.size != expected:
        raise ShapeMismatchError(f"{blob}: {data.size} samples, sidecar says {expected}")
    data = data.reshape(meta["L"], meta["N"], meta["N"]).astype(complex)
    return KSpaceData(data, mask, sigma=meta.get("sigma"), seed=meta.get("seed"))


# -- dictionaries ------------------------------------------------------------------------

def save_dictionary(prefix, dic: Dictionary):
    blob, side = _paths(prefix)
    blob.write_bytes(np.ascontiguousarray(dic.atoms, dtype="<c16").tobytes())
    write_json(side, {"J": dic.J, "L": dic.L, "t1": dic.t1.tolist(), "t2": dic.t2.tolist(),
                      "norms": dic.norms.tolist(), "grid": dic.grid, "seq_hash": dic.seq_hash,
                      "version": FORMAT_VERSION})
    return blob, side


def load_dictionary(prefix) -> Dictionary:
    blob, side = _paths(prefix)
    meta = read_json(side)
    atoms = np.frombuffer(blob.read_bytes(), dtype="<c16").reshape(meta["J"], meta["L"]).astype(complex)
    return Dictionary(np.asarray(meta["t1"]), np.asarray(meta["t2"]), atoms, np.asarray(meta["norms"]),
                      meta.get("grid", {}), meta.get("seq_hash", ""))


# -- parameter maps ----------------------------------------------------------------------

def _write_grid(path, grid: np.ndarray):
    N = grid.shape[0]
    with open(path, "w") as fh:
        fh.write(f"# N={N}\n")
        for row in grid:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _read_grid(path) -> np.ndarray:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("# N="):
            raise ValueError(f"{path}: missing '# N=' header")
        N = int(header[4:])
        grid = np.loadtxt(fh, delimiter=",", ndmin=2)
    if grid.shape != (N, N):
        raise ShapeMismatchError(f"{path}: grid shape {grid.shape} does not match header N={N}")
    return grid


def save_map(directory, x: ParameterMap):
    """One CSV per channel plus ``omega.csv`` (0/1) in ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, grid in x.channels().items():
        _write_grid(d / f"{name}.csv", grid)
    _write_grid(d / "omega.csv", x.omega.astype(float))


def load_map(directory) -> ParameterMap:
    """Read maps written by :func:`save_map`; also serves as the raw phantom loader
    (T1.csv, T2.csv, rho.csv or rho_re.csv/rho_im.csv, and an optional omega.csv mask)."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"map directory {d} does not exist")
    t1 = _read_grid(d / "T1.csv")
    t2 = _read_grid(d / "T2.csv")
    if (d / "rho_re.csv").exists():
        rho = _read_grid(d / "rho_re.csv") + 1j * _read_grid(d / "rho_im.csv")
    else:
        rho = _read_grid(d / "rho.csv")
    omega = _read_grid(d / "omega.csv") != 0 if (d / "omega.csv").exists() else None
    return ParameterMap(t1, t2, rho, omega)


__all__ = ["FORMAT_VERSION", "write_json", "read_json", "save_kspace", "load_kspace", "save_dictionary",
           "load_dictionary", "save_map", "load_map"]
