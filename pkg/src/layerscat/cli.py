"""Command-line front end: ``image``, ``solve`` and ``te-disk``.

Configuration is a single JSON document; flags override the matching JSON paths.
Exit codes: 0 success, 1 pipeline failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import logging
import pathlib
import sys
import time
from typing import Any, Dict, List, Optional

import numpy as np

from layerscat import __version__
from layerscat import factorization as fm
from layerscat import io
from layerscat.forward import DEFAULT_MASS_BLEND, MIN_RESOLUTION, ForwardProblem, energy_defect
from layerscat.geometry import ABSORBING, GEOMETRIES, MODES, GeometryError, builtin_geometry
from layerscat.modes import ModeSet, ModeWave, WoodAnomalyError
from layerscat.te_disk import DiskTEProblem, smallest_eigenvalue

log = logging.getLogger("layerscat")

EXIT_OK, EXIT_PIPELINE, EXIT_CONFIG = 0, 1, 2
JACCARD_TAUS = (0.3, 0.5, 0.7)

DEFAULTS: Dict[str, Any] = {
    "physics": {"k": 5.85, "alpha": 0.0, "h": None},
    "discretization": {"resolution": 15, "n_dtn": None, "M": 10, "mass_blend": DEFAULT_MASS_BLEND},
    "contrast": {"geometry": "ball", "params": {}, "q": None, "mode": ABSORBING},
    "imaging": {"grid": [128, 64], "delta": 0.0, "seed": 0, "truncation": 5e-4},
    "solve": {"incident_order": 0, "export_field": False},
    "te_disk": {"a_min": 4.0, "radius": 1.0, "k_min": 0.05, "k_max": 15.0, "max_order": 15},
    "output": {"directory": "out"},
}

# flag name -> JSON path
FLAG_PATHS = {
    "k": "physics.k",
    "alpha": "physics.alpha",
    "h": "physics.h",
    "resolution": "discretization.resolution",
    "n_dtn": "discretization.n_dtn",
    "M": "discretization.M",
    "mass_blend": "discretization.mass_blend",
    "geometry": "contrast.geometry",
    "q": "contrast.q",
    "mode": "contrast.mode",
    "grid": "imaging.grid",
    "delta": "imaging.delta",
    "seed": "imaging.seed",
    "truncation": "imaging.truncation",
    "incident_order": "solve.incident_order",
    "export_field": "solve.export_field",
    "a_min": "te_disk.a_min",
    "radius": "te_disk.radius",
    "k_min": "te_disk.k_min",
    "k_max": "te_disk.k_max",
    "max_order": "te_disk.max_order",
    "out": "output.directory",
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def _merge(base: dict, extra: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if key not in out:
            raise ConfigError(f"{prefix}{key}: unknown configuration field")
        if isinstance(out[key], dict) and key != "params":
            if not isinstance(val, dict):
                raise ConfigError(f"{prefix}{key}: expected an object")
            out[key] = _merge(out[key], val, f"{prefix}{key}.")
        else:
            out[key] = val
    return out


def _set_path(cfg: dict, path: str, value) -> None:
    node = cfg
    keys = path.split(".")
    for key in keys[:-1]:
        node = node[key]
    node[keys[-1]] = value


def parse_q(value) -> np.ndarray:
    """Accepts a scalar, a complex string like ``"1.5-0.5j"``, ``[re, im]`` or a 2x2 nested list."""

    def scalar(v):
        if isinstance(v, str):
            return complex(v.replace(" ", ""))
        if isinstance(v, (list, tuple)) and len(v) == 2 and all(isinstance(t, (int, float)) for t in v):
            return complex(v[0], v[1])
        if isinstance(v, (int, float)):
            return complex(v)
        raise ValueError(f"cannot read {v!r} as a complex number")

    if isinstance(value, (list, tuple)) and len(value) == 2 and all(isinstance(r, (list, tuple)) for r in value):
        return np.array([[scalar(v) for v in row] for row in value], dtype=complex)
    return scalar(value) * np.eye(2)


@dataclasses.dataclass
class RunConfig:
    """Validated configuration with defaults filled in."""

    command: str
    raw: Dict[str, Any]
    mode_set: Optional[ModeSet] = None
    contrast: Any = None

    @property
    def out_dir(self) -> pathlib.Path:
        return pathlib.Path(self.raw["output"]["directory"])

    def section(self, name: str) -> dict:
        return self.raw[name]


def _check(cond: bool, field: str, msg: str):
    if not cond:
        raise ConfigError(f"{field}: {msg}")


def build_config(command: str, file_cfg: Optional[dict] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Merges defaults, a config document and flag overrides, then validates.

    Raises:
        ConfigError: On unknown fields or invariant violations.
    """
    file_cfg = dict(file_cfg or {})
    file_cfg.pop("command", None)
    raw = _merge(DEFAULTS, file_cfg)
    for name, value in (overrides or {}).items():
        if value is not None:
            _set_path(raw, FLAG_PATHS[name], value)
    cfg = RunConfig(command, raw)
    if command == "te-disk":
        t = raw["te_disk"]
        try:
            DiskTEProblem(float(t["radius"]), float(t["a_min"]), int(t["max_order"]), float(t["k_min"]),
                          float(t["k_max"]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"te_disk: {exc}") from exc
        return cfg

    phys, disc, con, img = raw["physics"], raw["discretization"], raw["contrast"], raw["imaging"]
    _check(isinstance(phys["k"], (int, float)) and phys["k"] > 0, "physics.k", "must be > 0")
    _check(isinstance(disc["M"], int) and disc["M"] >= 1, "discretization.M", "must be an integer >= 1")
    _check(disc["resolution"] >= MIN_RESOLUTION, "discretization.resolution", f"must be >= {MIN_RESOLUTION}")
    _check(0 <= disc["mass_blend"] <= 1, "discretization.mass_blend", "must lie in [0, 1]")
    _check(img["truncation"] > 0, "imaging.truncation", "must be > 0")
    _check(img["delta"] >= 0, "imaging.delta", "must be >= 0")
    _check(isinstance(img["seed"], int), "imaging.seed", "must be an integer")
    grid = img["grid"]
    _check(isinstance(grid, (list, tuple)) and len(grid) == 2 and all(isinstance(g, int) and g > 0 for g in grid),
           "imaging.grid", "must be two positive integers")
    _check(con["geometry"] in GEOMETRIES, "contrast.geometry", f"must be one of {list(GEOMETRIES)}")
    _check(con["mode"] in MODES, "contrast.mode", f"must be one of {list(MODES)}")
    if command == "image":
        _check(con["mode"] == ABSORBING, "contrast.mode", "imaging requires an absorbing-imaging contrast")
    try:
        q = None if con["q"] is None else parse_q(con["q"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"contrast.q: {exc}") from exc
    try:
        contrast = builtin_geometry(con["geometry"], con["params"], q=q, mode=con["mode"])
    except (GeometryError, KeyError, OSError) as exc:
        raise ConfigError(f"contrast: {exc}") from exc
    h = phys["h"] if phys["h"] is not None else contrast.default_h()
    try:
        contrast.check_inside(h)
    except GeometryError as exc:
        raise ConfigError(f"physics.h: {exc}") from exc
    n_dtn = disc["n_dtn"] if disc["n_dtn"] is not None else max(2 * disc["M"], 30)
    try:
        ms = ModeSet(float(phys["k"]), float(phys["alpha"]), int(disc["M"]), int(n_dtn), float(h))
    except (ValueError, WoodAnomalyError) as exc:
        raise ConfigError(f"physics: {exc}") from exc
    cfg.mode_set = ms
    cfg.contrast = contrast
    return cfg


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------


class _Stages:
    def __init__(self):
        self.timings: Dict[str, float] = {}

    def run(self, name: str, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            out = fn(*args, **kwargs)
        except (ConfigError, PipelineError):
            raise
        except Exception as exc:  # noqa: BLE001 - reported with the stage name
            raise PipelineError(name, exc) from exc
        self.timings[name] = round(time.perf_counter() - t0, 6)
        return out


def _mode_summary(ms: ModeSet) -> dict:
    return {
        "propagating_count": ms.propagating_count(),
        "evanescent_count": ms.evanescent_count(),
        "n_dtn": ms.n_dtn,
        "h": ms.h,
    }


def _metadata(cfg: RunConfig, extra: dict) -> dict:
    out = {
        "tool": "layerscat",
        "version": __version__,
        "command": cfg.command,
        "config": cfg.raw,
    }
    if cfg.contrast is not None:
        out["contrast"] = cfg.contrast.to_dict()
    out.update(extra)
    return out


def run_image(cfg: RunConfig) -> dict:
    """Near field, noise, ``(WN)#`` spectrum and Picard indicator; writes CSV, PGM and JSON."""
    ms, contrast = cfg.mode_set, cfg.contrast
    img, disc = cfg.section("imaging"), cfg.section("discretization")
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    st = _Stages()
    problem = st.run("mesh", ForwardProblem, contrast, ms, disc["resolution"], mass_blend=disc["mass_blend"])
    near = st.run("near_field", fm.assemble_near_field, problem)
    noisy = st.run("noise", fm.add_noise, near, img["delta"], img["seed"])
    weighted = st.run("weighting", noisy.weighted)
    spec = st.run("spectrum", fm.sharp_spectrum, weighted, img["truncation"])
    n1, n2 = img["grid"]
    x1, x2 = fm.sampling_grid(n1, n2, ms.h)
    indicator = st.run("indicator", fm.picard_indicator, spec, ms, x1, x2)
    truth = contrast.mask(indicator.points)

    warnings: List[str] = []
    if spec.empty:
        warnings.append("empty spectrum")
        log.warning("empty spectrum: the indicator map is identically zero")
    jac = {str(t): fm.jaccard(indicator, truth, t) for t in JACCARD_TAUS}
    best_tau = max(JACCARD_TAUS, key=lambda t: jac[str(t)])
    ratio = fm.contrast_ratio(indicator, truth) if not spec.empty else 0.0

    def write():
        io.write_csv(out / "indicator.csv", ["x1", "x2", "I"], indicator.table())
        io.write_pgm(out / "indicator.pgm", io.to_gray(indicator.values[::-1], vmax=1.0))
        io.write_pgm(out / "truth.pgm", io.to_gray(truth[::-1].astype(float), vmax=1.0))

    st.run("write", write)
    noise_rel = float(np.linalg.norm(noisy.matrix - near.matrix) / np.linalg.norm(near.matrix)) \
        if np.any(near.matrix) else 0.0
    summary = {
        "modes": _mode_summary(ms),
        "noise": f"{100 * img['delta']:g}%",
        "noise_relative_frobenius": noise_rel,
        "seed": img["seed"],
        "spectrum": {
            "retained": int(spec.values.size),
            "raw_min": spec.raw_min,
            "raw_max": spec.raw_max,
            "psd_defect": spec.psd_defect,
            "truncation": spec.truncation,
        },
        "jaccard": jac,
        "best_tau": best_tau,
        "best_jaccard": jac[str(best_tau)],
        "inside_outside_ratio": ratio,
        "zero_series_points": indicator.zero_series,
        "mesh": problem.diagnostics(),
        "warnings": warnings,
        "timings_s": st.timings,
    }
    io.write_json(out / "metadata.json", _metadata(cfg, summary))
    return summary


def run_solve(cfg: RunConfig) -> dict:
    """Forward solve for one downward mode; writes Rayleigh CSV and an energy audit."""
    ms, contrast = cfg.mode_set, cfg.contrast
    disc, sol_cfg = cfg.section("discretization"), cfg.section("solve")
    n = int(sol_cfg["incident_order"])
    if abs(n) > ms.m_incident:
        raise ConfigError(f"solve.incident_order: |n| must be <= M = {ms.m_incident}")
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    st = _Stages()
    problem = st.run("mesh", ForwardProblem, contrast, ms, disc["resolution"], mass_blend=disc["mass_blend"])
    sol = st.run("solve", problem.solve_plane_wave, ModeWave.downward(n))
    ray = sol.rayleigh
    orders = ModeSet.orders(ray.band)
    defect = energy_defect(ms, ray, n)

    def write():
        rows = [(int(j), a.real, a.imag, b.real, b.imag) for j, a, b in zip(orders, ray.u_plus, ray.u_minus)]
        io.write_csv(out / "rayleigh.csv", ["n", "re_u_plus", "im_u_plus", "re_u_minus", "im_u_minus"], rows)
        if sol_cfg["export_field"]:
            io.write_csv(out / "field.csv", ["x1", "x2", "re_u", "im_u"], problem.field_table(sol.field))

    st.run("write", write)
    summary = {
        "modes": _mode_summary(ms),
        "incident_order": n,
        "energy": {
            "relative_defect": defect,
            "note": "conservation expected for real-TE contrasts; absorbing contrasts lose flux",
        },
        "mesh": problem.diagnostics(),
        "timings_s": st.timings,
    }
    io.write_json(out / "metadata.json", _metadata(cfg, summary))
    return summary


def run_te_disk(cfg: RunConfig) -> dict:
    """Disk transmission eigenvalues; writes ``roots.csv`` and ``summary.json``."""
    t = cfg.section("te_disk")
    problem = DiskTEProblem(float(t["radius"]), float(t["a_min"]), int(t["max_order"]), float(t["k_min"]),
                            float(t["k_max"]))
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    st = _Stages()
    res = st.run("roots", smallest_eigenvalue, problem)
    rows = [(m, k) for m, roots in sorted(res.roots_by_order.items()) for k in roots]
    st.run("write", io.write_csv, out / "roots.csv", ["m", "k"], rows)
    summary = {
        "k_eps": res.k_min,
        "order_of_k_eps": res.order_of_min,
        "status": "found" if res.found else "none found",
        "root_count": len(res.roots),
        "timings_s": st.timings,
    }
    io.write_json(out / "summary.json", _metadata(cfg, summary))
    return summary


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes"):
        return True
    if text.lower() in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _grid(text: str) -> List[int]:
    parts = text.lower().replace("x", ",").split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("grid must look like 128x64")
    return [int(p) for p in parts]


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="layerscat", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def physics(p):
        p.add_argument("--config", type=pathlib.Path, help="JSON configuration file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--k", type=float)
        p.add_argument("--alpha", type=float)
        p.add_argument("--h", type=float)
        p.add_argument("--resolution", type=float)
        p.add_argument("--n-dtn", dest="n_dtn", type=int)
        p.add_argument("--M", type=int)
        p.add_argument("--mass-blend", dest="mass_blend", type=float)
        p.add_argument("--geometry", help=f"one of {', '.join(GEOMETRIES)}")
        p.add_argument("--q", help="contrast value, e.g. 1.5-0.5j")
        p.add_argument("--mode", choices=MODES)

    img = sub.add_parser("image", help="reconstruct the support from synthetic near-field data")
    physics(img)
    img.add_argument("--grid", type=_grid, help="sampling grid, e.g. 128x64")
    img.add_argument("--delta", type=float, help="relative noise level")
    img.add_argument("--seed", type=int)
    img.add_argument("--truncation", type=float)

    solve = sub.add_parser("solve", help="forward solve for one downward mode")
    physics(solve)
    solve.add_argument("--incident-order", dest="incident_order", type=int)
    solve.add_argument("--export-field", dest="export_field", type=_bool)

    te = sub.add_parser("te-disk", help="transmission eigenvalues of a homogeneous disk")
    te.add_argument("--config", type=pathlib.Path)
    te.add_argument("--out")
    te.add_argument("--a-min", dest="a_min", type=float)
    te.add_argument("--radius", type=float)
    te.add_argument("--k-min", dest="k_min", type=float)
    te.add_argument("--k-max", dest="k_max", type=float)
    te.add_argument("--max-order", dest="max_order", type=int)
    return parser


def _print_summary(command: str, summary: dict) -> None:
    if command == "te-disk":
        k = summary["k_eps"]
        print(f"smallest transmission eigenvalue: {k:.12g}" if k is not None else "no root found in interval")
        return
    modes = summary["modes"]
    print(f"propagating modes: {modes['propagating_count']}")
    print(f"evanescent modes (|n| <= M): {modes['evanescent_count']}")
    if command == "image":
        print(f"noise: {summary['noise']}")
        print(f"retained eigenvalues: {summary['spectrum']['retained']}")
        jac = ", ".join(f"tau={t}: {v:.3f}" for t, v in summary["jaccard"].items())
        print(f"jaccard: {jac}")
        print(f"inside/outside mean ratio: {summary['inside_outside_ratio']:.3f}")
    else:
        print(f"energy defect: {summary['energy']['relative_defect']:.3e}")


def main(argv: Optional[List[str]] = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k in FLAG_PATHS}
    try:
        file_cfg = {}
        if args.config is not None:
            try:
                file_cfg = json.loads(args.config.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"config: cannot read {args.config}: {exc}") from exc
            if not isinstance(file_cfg, dict):
                raise ConfigError("config: top level must be a JSON object")
        cfg = build_config(args.command, file_cfg, overrides)
        runner = {"image": run_image, "solve": run_solve, "te-disk": run_te_disk}[args.command]
        summary = runner(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PipelineError as exc:
        print(f"pipeline failure: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    _print_summary(args.command, summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
