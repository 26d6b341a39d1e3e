"""Command-line experiment runner.

``fumi run -c config.json`` simulates ``monte_carlo_runs`` scenes (run ``r``
uses seed ``seed + r``), fuses each one and writes per-run and averaged
reports, objective traces and grayscale maps.  ``gen-scene``, ``fuse`` and
``metrics`` expose the same pipeline one stage at a time; ``info`` prints
shape summaries.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or arguments.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import BACKEND, __version__
from .datagen import (
    Scene,
    SceneSpec,
    default_blur,
    landsat_like_response,
    load_library,
    make_degradation,
    pan_response,
    simulate,
    synth_library,
)
from .driver import FumiConfig, FumiResult, run_fumi
from .io import (
    load_scene,
    read_cube,
    read_matrix_csv,
    save_scene,
    write_cube,
    write_json,
    write_map,
    write_matrix_csv,
    _HEADER,
)
from .metrics import (
    FusionReport,
    fusion_metrics,
    rmse_map,
    unmix_metrics,
    upsample_baseline,
)
from .model import SpectralImage, degrade

log = logging.getLogger("fumi")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
REPORT_COLUMNS = (
    "run", "seed",
    *FusionReport.FIELDS,
    "sam_M_deg", "nmse_M_db", "nmse_A_db",
    "baseline_bicubic_rsnr_db", "baseline_nearest_rsnr_db",
)
TRACE_COLUMNS = ("iteration", "objective", "hs_term", "ms_term")
SNAPSHOT_COUNT = 3


class ConfigError(ValueError):
    """Invalid experiment configuration (exit code 2)."""


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

@dataclass
class SceneConfig:
    n_rows: int = 100
    n_cols: int = 100
    p: int = 5
    dirichlet_alpha: float | list = 1.0
    library: str = "synthetic"
    library_bands: int = 224
    library_count: int = 20
    library_seed: int = 12345
    cube: str | None = None


@dataclass
class DegradationConfig:
    sigma: float = 1.7
    size: int = 7
    d: int = 4
    response: str = "landsat"
    ms_bands: int = 7
    pan_bands: int = 50
    snr_hs: float = 50.0
    snr_ms: float = 50.0
    noise: bool = True


@dataclass
class ExperimentConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    degradation: DegradationConfig = field(default_factory=DegradationConfig)
    fumi: dict = field(default_factory=dict)
    endmembers: str = "extract"
    monte_carlo_runs: int = 1
    seed: int = 0
    output_dir: str = "fumi_out"
    record_timing: bool = False
    base_dir: Path = field(default=Path("."), repr=False, compare=False)

    def fumi_config(self, seed: int) -> FumiConfig:
        return FumiConfig(**{**self.fumi, "p": self.scene.p, "seed": seed})

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


def _section(cls, raw, name):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"'{name}' must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{name}': {', '.join(unknown)}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"'{name}': {exc}") from None


def parse_config(raw: dict, base_dir=".") -> ExperimentConfig:
    """Validate a JSON document into an :class:`ExperimentConfig`."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    top = {"scene", "degradation", "fumi", "endmembers", "monte_carlo_runs", "seed",
           "output_dir", "record_timing"}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    scene = _section(SceneConfig, raw.get("scene"), "scene")
    deg = _section(DegradationConfig, raw.get("degradation"), "degradation")
    fumi = raw.get("fumi", {})
    if not isinstance(fumi, dict):
        raise ConfigError("'fumi' must be an object")
    fumi_keys = {f.name for f in dataclasses.fields(FumiConfig)} - {"p", "seed"}
    unknown = sorted(set(fumi) - fumi_keys)
    if unknown:
        raise ConfigError(f"unknown key(s) in 'fumi': {', '.join(unknown)}")
    cfg = ExperimentConfig(
        scene=scene,
        degradation=deg,
        fumi=dict(fumi),
        endmembers=raw.get("endmembers", "extract"),
        monte_carlo_runs=raw.get("monte_carlo_runs", 1),
        seed=raw.get("seed", 0),
        output_dir=raw.get("output_dir", "fumi_out"),
        record_timing=raw.get("record_timing", False),
        base_dir=Path(base_dir),
    )
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if not isinstance(cfg.monte_carlo_runs, int) or cfg.monte_carlo_runs < 1:
        raise ConfigError("monte_carlo_runs must be an integer >= 1")
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    if cfg.endmembers not in ("extract", "reference"):
        raise ConfigError("endmembers must be 'extract' or 'reference'")
    sc, dg = cfg.scene, cfg.degradation
    if sc.library not in ("synthetic",) and not sc.library.endswith(".csv"):
        raise ConfigError("scene.library must be 'synthetic' or a path to a .csv library")
    if sc.cube is not None and cfg.endmembers == "reference":
        raise ConfigError("endmembers='reference' needs a simulated scene, not an external cube")
    if dg.response not in ("landsat", "pan", "identity") and not dg.response.endswith(".csv"):
        raise ConfigError("degradation.response must be landsat, pan, identity or a .csv path")
    if dg.d < 1 or dg.size < 1 or dg.size % 2 == 0 or not dg.sigma > 0:
        raise ConfigError("degradation needs d >= 1, an odd kernel size and sigma > 0")
    if sc.cube is None and (sc.n_rows % dg.d or sc.n_cols % dg.d):
        raise ConfigError(f"scene {sc.n_rows}x{sc.n_cols} is not divisible by d={dg.d}")
    try:
        cfg.fumi_config(cfg.seed)
        if sc.cube is None:
            SceneSpec(sc.n_rows, sc.n_cols, sc.p, sc.dirichlet_alpha, 0).alpha()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(raw, base_dir=path.parent)


# --------------------------------------------------------------------------
# Pipeline stages
# --------------------------------------------------------------------------

def _response(cfg: ExperimentConfig, n_bands: int) -> np.ndarray:
    dg = cfg.degradation
    if dg.response == "landsat":
        return landsat_like_response(n_bands, dg.ms_bands)
    if dg.response == "pan":
        return pan_response(n_bands, dg.pan_bands)
    if dg.response == "identity":
        return np.eye(n_bands)
    R = read_matrix_csv(cfg.resolve(dg.response))
    if R.shape[1] != n_bands:
        raise ConfigError(f"response has {R.shape[1]} columns, scene has {n_bands} bands")
    return R


def build_scene(cfg: ExperimentConfig, seed: int) -> Scene:
    """Simulate (or degrade an external cube) for one Monte-Carlo seed."""
    sc, dg = cfg.scene, cfg.degradation
    if sc.cube is not None:
        X = read_cube(cfg.resolve(sc.cube))
        blur = default_blur(X.n_rows, X.n_cols, dg.sigma, dg.size)
        model = make_degradation(X, blur, dg.d, _response(cfg, X.bands),
                                 dg.snr_hs, dg.snr_ms, dg.noise)
        Y_H, Y_M = degrade(X, model, np.random.SeedSequence(seed).spawn(2)[1])
        meta = {"seed": seed, "sigma": float(dg.sigma), "size": int(dg.size), "d": int(dg.d),
                "snr_hs": float(dg.snr_hs), "snr_ms": float(dg.snr_ms), "noise": bool(dg.noise)}
        return Scene(None, None, X, Y_H, Y_M, model, meta)
    if sc.library == "synthetic":
        lib = synth_library(sc.library_bands, sc.library_count, sc.library_seed)
    else:
        lib = load_library(cfg.resolve(sc.library))
    spec = SceneSpec(sc.n_rows, sc.n_cols, sc.p, sc.dirichlet_alpha, seed)
    return simulate(spec, lib, sigma=dg.sigma, size=dg.size, d=dg.d,
                    response=_response(cfg, lib.n_bands), snr_hs=dg.snr_hs,
                    snr_ms=dg.snr_ms, draw_noise=dg.noise)


def fuse_scene(scene: Scene, fcfg: FumiConfig, endmembers: str = "extract") -> FumiResult:
    if endmembers == "reference":
        if scene.M_ref is None:
            raise ConfigError("endmembers='reference' but the scene has no reference endmembers")
        return run_fumi(scene.Y_H, scene.Y_M, scene.model, fcfg, M_init=scene.M_ref)
    return run_fumi(scene.Y_H, scene.Y_M, scene.model, fcfg)


def score(scene: Scene, result: FumiResult, wall_time_s: float = 0.0) -> dict:
    """All reports for one run as plain dictionaries."""
    d = scene.model.downsampler.d
    out = {
        "fusion": fusion_metrics(result.X_hat, scene.X_ref, d, wall_time_s).to_dict(),
        "baseline": {
            m: fusion_metrics(upsample_baseline(scene.Y_H, d, m), scene.X_ref, d).to_dict()
            for m in ("bicubic", "nearest")
        },
        "unmix": None,
    }
    if scene.M_ref is not None and scene.A_ref is not None:
        out["unmix"] = unmix_metrics(result.M_hat, result.A_hat, scene.M_ref, scene.A_ref).to_dict()
    return out


def _write_trace(path, result: FumiResult) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for i, o in enumerate(result.objective_trace, start=1):
            w.writerow([i, repr(float(o.value)), repr(float(o.hs_term)), repr(float(o.ms_term))])


def _snapshot_bands(n_bands: int) -> list[int]:
    return sorted({int(round(b)) for b in np.linspace(0, n_bands - 1, SNAPSHOT_COUNT)})


def _write_maps(directory: Path, scene: Scene, result: FumiResult, reports: dict) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    n_rows, n_cols = scene.X_ref.shape

    def image(row):
        return SpectralImage(row[None, :], n_rows, n_cols).cube()[0]

    write_map(directory / "rmse.pgm", rmse_map(result.X_hat, scene.X_ref))
    A_hat = result.A_hat
    if reports["unmix"] is not None:
        A_hat = A_hat[reports["unmix"]["permutation"]]
        for k, row in enumerate(scene.A_ref):
            write_map(directory / f"abundance_ref_{k}.pgm", image(row))
    for k, row in enumerate(A_hat):
        write_map(directory / f"abundance_est_{k}.pgm", image(row))
    for b in _snapshot_bands(scene.X_ref.bands):
        write_map(directory / f"band_{b:03d}_est.pgm", image(result.X_hat.data[b]))
        write_map(directory / f"band_{b:03d}_ref.pgm", image(scene.X_ref.data[b]))


def _report_row(run: int, seed: int, reports: dict) -> dict:
    row = {"run": run, "seed": seed, **reports["fusion"]}
    unmix = reports["unmix"] or {}
    for k in ("sam_M_deg", "nmse_M_db", "nmse_A_db"):
        row[k] = unmix.get(k, float("nan"))
    row["baseline_bicubic_rsnr_db"] = reports["baseline"]["bicubic"]["rsnr_db"]
    row["baseline_nearest_rsnr_db"] = reports["baseline"]["nearest"]["rsnr_db"]
    return row


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _single_run(cfg: ExperimentConfig, run: int, out: Path) -> tuple[dict, float]:
    seed = cfg.seed + run
    with threadpool_limits(1):
        scene = build_scene(cfg, seed)
        t0 = time.perf_counter()
        result = fuse_scene(scene, cfg.fumi_config(seed), cfg.endmembers)
        elapsed = time.perf_counter() - t0
        reports = score(scene, result, elapsed if cfg.record_timing else 0.0)
    run_dir = out / f"run_{run:03d}"
    run_dir.mkdir(parents=True, exist_ok=True)
    write_json(run_dir / "fusion.json", reports["fusion"])
    write_json(run_dir / "baseline.json", reports["baseline"])
    if reports["unmix"] is not None:
        write_json(run_dir / "unmix.json", reports["unmix"])
    write_json(run_dir / "result.json", {
        "seed": seed,
        "iterations": result.iterations,
        "converged": bool(result.converged),
        "mu": float(result.mu),
        "final_objective": float(result.objective_trace[-1].value),
    })
    _write_trace(run_dir / "trace.csv", result)
    _write_maps(run_dir / "maps", scene, result, reports)
    return _report_row(run, seed, reports), elapsed


def _run_job(args):
    cfg, run, out = args
    return _single_run(cfg, run, out)


def run_experiment(cfg: ExperimentConfig, threads: int = 1, out_dir=None) -> Path:
    """Run every Monte-Carlo draw and write the reports; returns the output directory."""
    out = Path(out_dir) if out_dir is not None else cfg.resolve(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, r, out) for r in range(cfg.monte_carlo_runs)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    rows = [r for r, _ in results]

    numeric = [c for c in REPORT_COLUMNS if c not in ("run", "seed")]
    mean = {c: float(np.mean([row[c] for row in rows])) for c in numeric}
    with (out / "reports.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])
        w.writerow(["mean", ""] + [_fmt(mean[c]) for c in numeric])
    summary = {
        "runs": cfg.monte_carlo_runs,
        "master_seed": cfg.seed,
        "fusion_mean": {k: mean[k] for k in FusionReport.FIELDS},
        "unmix_mean": None if np.isnan(mean["nmse_A_db"])
        else {k: mean[k] for k in ("sam_M_deg", "nmse_M_db", "nmse_A_db")},
        "baseline_mean": {"bicubic_rsnr_db": mean["baseline_bicubic_rsnr_db"],
                          "nearest_rsnr_db": mean["baseline_nearest_rsnr_db"]},
    }
    write_json(out / "summary.json", summary)
    if cfg.record_timing:
        write_json(out / "timing.json", {f"run_{r:03d}": t for r, (_, t) in enumerate(results)})
    return out


# --------------------------------------------------------------------------
# Command line
# --------------------------------------------------------------------------

def _threads(value) -> int:
    if value is None:
        value = os.environ.get("FUMI_THREADS", "1")
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"thread count {value!r} is not an integer") from None
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    return n


def _config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else parse_config({})
    if getattr(args, "seed", None) is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        cfg.seed = args.seed
    return cfg


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    out = run_experiment(cfg, _threads(args.threads), args.out)
    print(out / "summary.json")
    return EXIT_OK


def cmd_gen_scene(args) -> int:
    cfg = _config_from_args(args)
    with threadpool_limits(1):
        scene = build_scene(cfg, cfg.seed)
    print(save_scene(args.out, scene))
    return EXIT_OK


def _require_bundle(path) -> Scene:
    try:
        return load_scene(path)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None


def cmd_fuse(args) -> int:
    cfg = _config_from_args(args)
    scene = _require_bundle(args.scene)
    p = args.p if args.p is not None else scene.meta.get("p") or cfg.scene.p
    fields = {**cfg.fumi, "p": int(p), "seed": cfg.seed}
    if args.mode:
        fields["mode"] = args.mode
    try:
        fcfg = FumiConfig(**fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    endmembers = args.endmembers or cfg.endmembers
    with threadpool_limits(1):
        result = fuse_scene(scene, fcfg, endmembers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_cube(out / "X_hat.bin", result.X_hat)
    write_cube(out / "A_hat.bin", SpectralImage(result.A_hat, *result.X_hat.shape))
    write_matrix_csv(out / "M_hat.csv", result.M_hat)
    _write_trace(out / "trace.csv", result)
    write_json(out / "result.json", {
        "seed": cfg.seed,
        "iterations": result.iterations,
        "converged": bool(result.converged),
        "mu": float(result.mu),
        "final_objective": float(result.objective_trace[-1].value),
    })
    print(out)
    return EXIT_OK


def cmd_metrics(args) -> int:
    scene = _require_bundle(args.scene)
    est = Path(args.estimate)
    if not (est / "X_hat.bin").exists():
        raise ConfigError(f"{est}: no X_hat.bin (run 'fumi fuse' first)")
    X_hat = read_cube(est / "X_hat.bin")
    M_hat = read_matrix_csv(est / "M_hat.csv") if (est / "M_hat.csv").exists() else None
    A_hat = read_cube(est / "A_hat.bin").data if (est / "A_hat.bin").exists() else None
    d = scene.model.downsampler.d
    reports = {"fusion": fusion_metrics(X_hat, scene.X_ref, d).to_dict(), "unmix": None}
    if M_hat is not None and A_hat is not None and scene.M_ref is not None:
        reports["unmix"] = unmix_metrics(M_hat, A_hat, scene.M_ref, scene.A_ref).to_dict()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "fusion.json", reports["fusion"])
        if reports["unmix"] is not None:
            write_json(out / "unmix.json", reports["unmix"])
    print(json.dumps(reports, indent=2, sort_keys=True))
    return EXIT_OK


def _cube_summary(path: Path) -> dict:
    raw = path.read_bytes()[: _HEADER.size]
    _, version, _, bands, n_rows, n_cols = _HEADER.unpack(raw)
    return {"file": str(path), "version": version, "bands": bands, "n_rows": n_rows,
            "n_cols": n_cols, "pixels": n_rows * n_cols}


def cmd_info(args) -> int:
    target = Path(args.path) if args.path else None
    if target is None:
        info = {"version": __version__, "backend": BACKEND}
    elif target.is_dir() and (target / "meta.json").exists():
        meta = json.loads((target / "meta.json").read_text())
        cubes = {f.name: _cube_summary(f) for f in sorted(target.glob("*.bin"))}
        info = {"bundle": str(target), "bands": meta["bands"], "pixels": meta["pixels"],
                "n_rows": meta["n_rows"], "n_cols": meta["n_cols"], "p": meta.get("p"),
                "d": meta["d"], "cubes": cubes}
    elif target.suffix == ".json":
        cfg = load_config(target)
        info = {"config": str(target), "scene": dataclasses.asdict(cfg.scene),
                "degradation": dataclasses.asdict(cfg.degradation),
                "fumi": dataclasses.asdict(cfg.fumi_config(cfg.seed)),
                "monte_carlo_runs": cfg.monte_carlo_runs, "seed": cfg.seed}
    elif target.is_file():
        try:
            info = _cube_summary(target)
        except Exception:
            raise ConfigError(f"{target}: not a cube file") from None
    else:
        raise ConfigError(f"{target}: not a scene bundle, cube or config file")
    print(json.dumps(info, indent=2, sort_keys=True, default=str))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fumi", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"fumi {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a Monte-Carlo experiment from a JSON config")
    r.add_argument("-c", "--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="output directory (overrides output_dir)")
    r.add_argument("--threads", help="worker processes (default: $FUMI_THREADS or 1)")
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("gen-scene", help="simulate one scene and save it as a bundle")
    g.add_argument("-c", "--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_scene)

    f = sub.add_parser("fuse", help="run the fusion on an existing scene bundle")
    f.add_argument("--scene", required=True)
    f.add_argument("-c", "--config")
    f.add_argument("--seed", type=int)
    f.add_argument("--p", type=int)
    f.add_argument("--mode", choices=("supervised", "unsupervised"))
    f.add_argument("--endmembers", choices=("extract", "reference"))
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fuse)

    m = sub.add_parser("metrics", help="score a fused estimate against a scene bundle")
    m.add_argument("--scene", required=True)
    m.add_argument("--estimate", required=True, help="directory written by 'fumi fuse'")
    m.add_argument("--out")
    m.set_defaults(func=cmd_metrics)

    i = sub.add_parser("info", help="summarise a bundle, cube or config (or the install)")
    i.add_argument("path", nargs="?")
    i.set_defaults(func=cmd_info)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"fumi: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"fumi: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
