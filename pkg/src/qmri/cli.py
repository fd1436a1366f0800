"""Command-line driver: ``qmri simulate|dict|reconstruct|compare``.

Exit codes: 0 success, 1 numerical failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy
from threadpoolctl import threadpool_limits

from . import __version__
from .baselines import BlipConfig, blip_reconstruct, mrf_reconstruct
from .bloch import PulseSequence
from .dictionary import build_dictionary, grid_range
from .encoding import cartesian_sampling, full_sampling, radial_sampling
from .errors import DomainError, QMRIError, ShapeMismatchError
from .io import load_dictionary, load_kspace, load_map, read_json, save_dictionary, save_kspace, save_map, write_json
from .maps import FeasibleBox, ParameterMap
from .metrics import error_rate, write_comparison_csv
from .phantom import PhantomSpec, brain_phantom, make_phantom, on_grid_phantom, snr, synthesize_data
from .solver import SolverConfig, solve_gauss_newton, solve_lm
from .validation import check_kspace, check_sequence

METHODS = ("mrf", "blip", "gn", "lm")


class ConfigError(Exception):
    pass


def _require(section: dict, key: str, where: str):
    if not isinstance(section, dict) or key not in section:
        raise ConfigError(f"missing required field '{where}.{key}'")
    return section[key]


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    cfg["_base"] = str(path.parent)
    return cfg


def _resolve(cfg: dict, value) -> Path:
    p = Path(value)
    return p if p.is_absolute() else Path(cfg.get("_base", ".")) / p


def _output_dir(cfg: dict) -> Path:
    return _resolve(cfg, _require(cfg, "output", "config"))


# -- config sections -----------------------------------------------------------------------

def sequence_from_config(cfg: dict) -> PulseSequence:
    sec = _require(cfg, "sequence", "config")
    try:
        if "flip_angles" in sec:
            return PulseSequence(sec["flip_angles"], sec["repetition_times"], sec.get("phase_shifts",
                                 [0.0] * len(sec["flip_angles"])))
        L = int(_require(sec, "L", "sequence"))
        alpha = np.deg2rad(sec["alpha_deg"]) if "alpha_deg" in sec else float(_require(sec, "alpha", "sequence"))
        return PulseSequence.constant(L, alpha, float(_require(sec, "TR", "sequence")), float(sec.get("phi", 0.0)))
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid 'sequence' section: {exc}") from None


def mask_from_config(cfg: dict, N: int, L: int):
    sec = _require(cfg, "sampling", "config")
    modes = [k for k in ("cartesian", "radial", "full") if k in sec]
    if len(modes) != 1:
        raise ConfigError("'sampling' must contain exactly one of 'cartesian', 'radial', 'full'")
    mode = modes[0]
    try:
        if mode == "cartesian":
            return cartesian_sampling(N, int(_require(sec["cartesian"], "s", "sampling.cartesian")), L)
        if mode == "radial":
            r = sec["radial"]
            return radial_sampling(N, int(_require(r, "p", "sampling.radial")),
                                   int(_require(r, "s", "sampling.radial")), L)
        return full_sampling(N, L)
    except ValueError as exc:
        raise ConfigError(f"invalid 'sampling' section: {exc}") from None


def phantom_from_config(cfg: dict) -> ParameterMap:
    if "input" in cfg and "phantom" in cfg["input"]:
        path = _resolve(cfg, cfg["input"]["phantom"])
        if not path.is_dir():
            raise ConfigError(f"field 'input.phantom': directory {path} does not exist")
        return load_map(path)
    sec = _require(cfg, "phantom", "config")
    kind = sec.get("kind", "brain")
    if kind == "brain":
        return brain_phantom(int(sec.get("N", 64)), int(sec.get("supersample", 2)), sec.get("complex_offset"))
    if kind == "on_grid":
        return on_grid_phantom(int(sec.get("N", 32)))
    if kind == "spec":
        path = _resolve(cfg, _require(sec, "path", "phantom"))
        if not path.is_file():
            raise ConfigError(f"field 'phantom.path': file {path} does not exist")
        return make_phantom(PhantomSpec.from_dict(read_json(path)))
    raise ConfigError(f"field 'phantom.kind': unknown value {kind!r}")


def _grid(spec, where):
    if not isinstance(spec, (list, tuple)) or len(spec) != 3:
        raise ConfigError(f"field '{where}' must be [start, stop, step]")
    return grid_range(*map(float, spec))


def dictionary_from_config(cfg: dict, section: dict, seq: PulseSequence, where: str):
    if "path" in section:
        dic = load_dictionary(_resolve(cfg, section["path"]))
        if dic.L != seq.L:
            raise ConfigError(f"field '{where}.path': dictionary length {dic.L} != sequence L={seq.L}")
        return dic
    return build_dictionary(_grid(_require(section, "t1", where), f"{where}.t1"),
                            _grid(_require(section, "t2", where), f"{where}.t2"), seq)


# -- manifest ------------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cfg: dict, outputs, seeds=None):
    clean = {k: v for k, v in cfg.items() if not k.startswith("_")}
    canonical = json.dumps(clean, sort_keys=True).encode()
    files = {}
    for p in outputs:
        p = Path(p)
        targets = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
        for q in targets:
            files[str(q.relative_to(out))] = _sha256(q)
    write_json(out / f"manifest_{command}.json", {
        "command": command,
        "config": clean,
        "config_sha256": hashlib.sha256(canonical).hexdigest(),
        "seeds": seeds or {},
        "versions": {"qmri": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "outputs": files,
    })


# -- commands ------------------------------------------------------------------------------

def cmd_simulate(cfg: dict) -> int:
    out = _output_dir(cfg)
    x = phantom_from_config(cfg)
    seq = sequence_from_config(cfg)
    mask = mask_from_config(cfg, x.N, seq.L)
    noise = cfg.get("noise", {})
    sigma, seed = float(noise.get("sigma", 0.0)), int(noise.get("seed", 0))
    if sigma < 0:
        raise ConfigError("field 'noise.sigma' must be >= 0")
    out.mkdir(parents=True, exist_ok=True)
    D, _ = synthesize_data(x, seq, mask, sigma, seed)
    save_map(out / "truth", x)
    blob, side = save_kspace(out / "kspace", D)
    write_json(out / "sequence.json", seq.to_dict())
    ratio = snr(synthesize_data(x, seq, mask)[0], D) if sigma > 0 else float("inf")
    write_manifest(out, "simulate", cfg, [out / "truth", blob, side, out / "sequence.json"], {"noise": seed})
    print(f"wrote {blob} ({D.L} frames, N={D.N}); SNR = {ratio:.4g}")
    return 0


def cmd_dict(cfg: dict) -> int:
    out = _output_dir(cfg)
    seq = sequence_from_config(cfg)
    dic = dictionary_from_config(cfg, _require(cfg, "dictionary", "config"), seq, "dictionary")
    out.mkdir(parents=True, exist_ok=True)
    blob, side = save_dictionary(out / "dictionary", dic)
    write_manifest(out, "dict", cfg, [blob, side])
    print(f"wrote {blob} ({dic.J} atoms, L={dic.L})")
    return 0


def _support(cfg: dict, method: dict, data_dir: Path, N: int):
    spec = method.get("support", "auto")
    if spec == "all":
        return np.ones((N, N), dtype=bool)
    if spec == "auto":
        truth = data_dir / "truth"
        return load_map(truth).omega if truth.is_dir() else np.ones((N, N), dtype=bool)
    path = _resolve(cfg, spec)
    if not path.is_dir():
        raise ConfigError(f"field 'method.support': directory {path} does not exist")
    return load_map(path).omega


def cmd_reconstruct(cfg: dict) -> int:
    out = _output_dir(cfg)
    method = _require(cfg, "method", "config")
    name = _require(method, "name", "method")
    if name not in METHODS:
        raise ConfigError(f"field 'method.name': expected one of {METHODS}, got {name!r}")
    seq = sequence_from_config(cfg)
    check_sequence(seq)
    prefix = _resolve(cfg, cfg.get("input", {}).get("kspace", str(out / "kspace")))
    if not prefix.with_suffix(".json").is_file():
        raise ConfigError(f"field 'input.kspace': {prefix.with_suffix('.json')} does not exist")
    D = load_kspace(prefix)
    if D.L != seq.L:
        raise ConfigError(f"data have L={D.L} frames but the sequence has L={seq.L}")
    check_kspace(D, seq)
    support = _support(cfg, method, prefix.parent, D.N)
    complex_rho = bool(method.get("complex_rho", False))
    label = method.get("label", name)
    dest = out / label
    dest.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    report, blip = None, None
    if name == "mrf":
        dic = dictionary_from_config(cfg, _require(method, "dictionary", "method"), seq, "method.dictionary")
        t0 = time.perf_counter()
        x = mrf_reconstruct(D, dic, support, complex_rho)
    elif name == "blip":
        dic = dictionary_from_config(cfg, _require(method, "dictionary", "method"), seq, "method.dictionary")
        blip = _blip(method, dic, complex_rho)
        t0 = time.perf_counter()
        res = blip_reconstruct(D, blip, support)
        x = res.map
        res.to_csv(dest / "report.csv")
    else:
        if "init" in method:
            path = _resolve(cfg, method["init"])
            if not path.is_dir():
                raise ConfigError(f"field 'method.init': directory {path} does not exist")
            x0 = load_map(path)
        else:
            init = method.get("init_dictionary", {"t1": [400, 5000, 400], "t2": [40, 500, 40]})
            dic = dictionary_from_config(cfg, init, seq, "method.init_dictionary")
            x0 = blip_reconstruct(D, _blip(method.get("init_blip", {}), dic, complex_rho), support).map
        solver = _solver_config(method)
        solve = solve_gauss_newton if name == "gn" else solve_lm
        x, report = solve(x0, D, seq, cfg=solver)
        report.to_csv(dest / "report.csv")
    wall = time.perf_counter() - t0
    vec = x.to_vector()
    if not np.all(np.isfinite(vec)):
        raise FloatingPointError("reconstruction produced non-finite values")
    save_map(dest, x)
    result = {"method": name, "label": label, "wall_time": wall}
    if report is not None:
        result.update(termination=report.termination, iterations=report.iterations)
    write_json(dest / "result.json", result)
    write_manifest(out, f"reconstruct_{label}", cfg, [dest])
    print(f"{label}: wrote maps to {dest} in {wall:.3f} s")
    return 0


def _blip(section: dict, dic, complex_rho: bool) -> BlipConfig:
    try:
        return BlipConfig(dic, int(section.get("iterations", 20)), section.get("step"),
                          section.get("step_rule", "backtracking"), complex_rho=complex_rho,
                          density=section.get("density", "norm"))
    except ValueError as exc:
        raise ConfigError(f"invalid BLIP settings: {exc}") from None


def _solver_config(method: dict) -> SolverConfig:
    keys = ("lambda0", "beta", "epsilon", "max_iters", "varrho", "delta", "cg_tol", "cg_maxiter", "project",
            "fast_path", "damping_units", "active_set")
    kw = {k: method[k] for k in keys if k in method}
    try:
        if "box" in method:
            kw["box"] = FeasibleBox.from_dict(method["box"])
        return SolverConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid solver settings: {exc}") from None


def cmd_compare(truth_dir, run_dirs, out_path=None) -> int:
    truth_dir = Path(truth_dir)
    if not truth_dir.is_dir():
        raise ConfigError(f"truth directory {truth_dir} does not exist")
    truth = load_map(truth_dir)
    rows = []
    for d in map(Path, run_dirs):
        if not d.is_dir():
            raise ConfigError(f"result directory {d} does not exist")
        meta = read_json(d / "result.json") if (d / "result.json").is_file() else {}
        rep = error_rate(load_map(d), truth, meta.get("wall_time"))
        rows.append((meta.get("label", d.name), rep))
    if out_path is None:
        write_comparison_csv(sys.stdout, rows)
    else:
        write_comparison_csv(out_path, rows)
        print(f"wrote {out_path}")
    return 0


# -- entry point ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qmri", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("simulate", "dict", "reconstruct"):
        p = sub.add_parser(name)
        p.add_argument("config")
        p.add_argument("--out", help="override the output directory")
        if name == "simulate":
            p.add_argument("--seed", type=int, help="override noise.seed")
        if name == "reconstruct":
            p.add_argument("--method", choices=METHODS, help="override method.name")
    p = sub.add_parser("compare")
    p.add_argument("truth_dir")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", help="write the table here instead of stdout")
    return ap


def _dispatch(args) -> int:
    if args.command == "compare":
        return cmd_compare(args.truth_dir, args.run_dirs, args.out)
    cfg = load_config(args.config)
    if args.out:
        cfg["output"] = str(Path(args.out).resolve())
    if getattr(args, "seed", None) is not None:
        cfg.setdefault("noise", {})["seed"] = args.seed
    if getattr(args, "method", None):
        cfg.setdefault("method", {})["name"] = args.method
    return {"simulate": cmd_simulate, "dict": cmd_dict, "reconstruct": cmd_reconstruct}[args.command](cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = os.environ.get("QMRI_THREADS")
    try:
        limit = int(threads) if threads else None
        if limit is not None and limit < 1:
            raise ValueError
    except ValueError:
        print(f"error: QMRI_THREADS must be a positive integer, got {threads!r}", file=sys.stderr)
        return 2
    try:
        with threadpool_limits(limits=limit):
            return _dispatch(args)
    except (ConfigError, DomainError, ShapeMismatchError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FloatingPointError, np.linalg.LinAlgError, QMRIError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
