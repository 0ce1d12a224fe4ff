"""``phasedecoder simulate|reconstruct|compare``.

Exit codes: 0 success, 2 config error, 3 I/O error, 4 precondition error,
5 solver divergence.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from typing import List, Optional

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .decoder import save_checkpoint
from .field import RealImage
from .io import (TRUTH_PHASE, load_dataset, read_coefficients, read_loss_csv, read_pfm,
                 save_dataset, write_coefficients, write_loss_csv, write_pfm)
from .sim import compare_phase, defocus_model, defocus_zernike_truth, make_target, simulate_stack
from .solvers import DivergenceError, solve_dpd, solve_wirtinger
from .zernike import UnsupportedModeError, make_zernike_basis

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_PRECONDITION, EXIT_DIVERGENCE = 0, 2, 3, 4, 5

CONFIG_SNAPSHOT = "config.yaml"
RUN_SUMMARY = "run.json"
METRICS = "metrics.json"


class PreconditionError(RuntimeError):
    pass


class IOFailure(RuntimeError):
    pass


def _snapshot(cfg: RunConfig, out_dir: str):
    with open(os.path.join(out_dir, CONFIG_SNAPSHOT), "w", encoding="utf-8") as f:
        f.write(cfg.to_yaml())


def _makedirs(path: str):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise IOFailure(f"cannot create output directory {path}: {exc}") from exc


def _load_dataset(path: str):
    if not os.path.isdir(path):
        raise IOFailure(f"dataset directory {path} does not exist")
    try:
        return load_dataset(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise IOFailure(f"cannot read dataset {path}: {exc}") from exc


# ------------------------------------------------------------------ simulate

def cmd_simulate(cfg: RunConfig, out_dir: str) -> int:
    geometry = cfg.geometry()
    try:
        phase = make_target(cfg.target(), geometry.grid)
    except OSError as exc:
        raise IOFailure(f"cannot read custom target: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"target: {exc}") from exc
    stack, _ = simulate_stack(phase, geometry, cfg.defocus_um, cfg.noise())
    try:
        basis = make_zernike_basis(geometry, cfg.zernike_modes)
    except UnsupportedModeError as exc:
        raise ConfigError(f"zernike.modes: {exc}") from exc
    truth_z = defocus_zernike_truth(basis, cfg.defocus_um)
    _makedirs(out_dir)
    save_dataset(out_dir, stack, geometry, cfg.defocus_um, cfg.noise(), phase, truth_z)
    _snapshot(cfg, out_dir)
    g = geometry.grid
    zs = ", ".join(f"{z:g}" for z in cfg.defocus_um)
    print(f"simulated N={len(stack)} grid={g.width}x{g.height} defocus_um=[{zs}] -> {out_dir}")
    return EXIT_OK


# --------------------------------------------------------------- reconstruct

def _write_common(out_dir, result, geometry, cfg):
    from . import plotting
    write_pfm(os.path.join(out_dir, "phase.pfm"), result.phase.values)
    write_loss_csv(os.path.join(out_dir, "loss.csv"), result.logged_iterations,
                   result.loss_history)
    plotting.phase_heatmap(os.path.join(out_dir, "phase.png"), result.phase.values,
                           geometry.grid.pixel_size, "reconstructed phase")
    plotting.loss_curve(os.path.join(out_dir, "loss.png"), result.logged_iterations,
                        [r.total for r in result.loss_history])
    _snapshot(cfg, out_dir)


def cmd_reconstruct(dataset_dir: str, method: str, cfg: RunConfig, out_dir: str,
                    progress=sys.stderr) -> int:
    from . import plotting
    ds = _load_dataset(dataset_dir)
    geometry = ds.geometry
    summary = {"method": method}
    if method == "wf":
        if ds.defocus_um is None:
            raise PreconditionError("baseline requires known aberrations: "
                                    "the dataset records no defocus list")
        model = defocus_model(geometry, ds.defocus_um)
        result = solve_wirtinger(ds.stack, model, cfg.wirtinger(), progress=progress)
        summary["step_size"] = result.extra["step_size"]
    else:
        try:
            basis = make_zernike_basis(geometry, cfg.zernike_modes)
            dcfg = cfg.decoder(output_side=geometry.grid.width)
        except ValueError as exc:
            raise ConfigError(f"decoder/zernike settings do not fit the dataset: {exc}") from exc
        if geometry.grid.width != geometry.grid.height:
            raise PreconditionError("the decoder needs a square grid")
        o = cfg.data["optimizer"]
        result = solve_dpd(ds.stack, basis, dcfg, cfg.rmsprop(), zernike_init_std=o["init_std"],
                           defocus_sign=o["defocus_sign"], precision=o["precision"],
                           progress=progress)
        summary["twin_flipped"] = result.twin_flipped
    _makedirs(out_dir)
    _write_common(out_dir, result, geometry, cfg)
    if method == "dpd":
        write_coefficients(os.path.join(out_dir, "zernike.csv"), result.zernike_coeffs)
        from .grad import zernike_pupils
        pupils = zernike_pupils(basis, np.asarray(result.zernike_coeffs, dtype=np.float64))
        fstep = 1.0 / (geometry.grid.width * geometry.grid.pixel_size)
        for n, p in enumerate(pupils):
            plotting.pupil_phase_heatmap(os.path.join(out_dir, f"pupil_phase_{n:03d}.png"), p,
                                         geometry.cutoff, fstep,
                                         f"pupil phase, measurement {n}")
        save_checkpoint(os.path.join(out_dir, "weights.bin"), dcfg,
                        result.weights.astype(np.float64),
                        np.asarray(result.zernike_coeffs, dtype=np.float64))
    summary.update(iterations_run=result.iterations_run, final_loss=result.final_loss,
                   wall_time=result.wall_time)
    with open(os.path.join(out_dir, RUN_SUMMARY), "w") as f:
        json.dump(summary, f, indent=2)
        f.write("\n")
    print(f"{method}: {result.iterations_run} iterations, final loss "
          f"{result.final_loss:.6g} -> {out_dir}")
    return EXIT_OK


# ------------------------------------------------------------------- compare

def format_table(rows) -> str:
    width = max(len(k) for k, _ in rows)
    lines = [f"{'metric':<{width}}  value", f"{'-' * width}  {'-' * 12}"]
    lines += [f"{k:<{width}}  {v}" for k, v in rows]
    return "\n".join(lines)


def cmd_compare(result_dir: str, dataset_dir: str, out_dir: Optional[str] = None,
                cfg: Optional[RunConfig] = None) -> int:
    from . import plotting
    phase_path = os.path.join(result_dir, "phase.pfm")
    truth_path = os.path.join(dataset_dir, TRUTH_PHASE)
    if not os.path.isdir(result_dir) or not os.path.isdir(dataset_dir):
        raise IOFailure("result and dataset directories must both exist")
    if not os.path.exists(truth_path):
        raise PreconditionError(f"no ground truth: {truth_path} is missing")
    try:
        rec = read_pfm(phase_path)
        truth = read_pfm(truth_path)
    except (OSError, ValueError) as exc:
        raise IOFailure(str(exc)) from exc
    if rec.shape != truth.shape:
        raise PreconditionError(f"reconstruction {rec.shape} and truth {truth.shape} differ")
    ds = _load_dataset(dataset_dir)
    grid = ds.stack.grid
    zern = zern_truth = None
    zpath = os.path.join(result_dir, "zernike.csv")
    if os.path.exists(zpath) and ds.truth_zernike is not None:
        zern = read_coefficients(zpath)
        zern_truth = ds.truth_zernike
        if zern.shape != zern_truth.shape:
            zern = zern_truth = None
    loss_final = None
    lpath = os.path.join(result_dir, "loss.csv")
    if os.path.exists(lpath):
        _, losses = read_loss_csv(lpath)
        loss_final = float(losses[-1]) if losses.size else None
    report = compare_phase(RealImage(grid, rec), RealImage(grid, truth), zern, zern_truth,
                           loss_final)
    out_dir = out_dir or result_dir
    _makedirs(out_dir)
    with open(os.path.join(out_dir, METRICS), "w") as f:
        json.dump(report.to_dict(), f, indent=2)
        f.write("\n")
    plotting.comparison_panel(os.path.join(out_dir, "comparison.png"), rec, truth,
                              grid.pixel_size, report.rmse_offset_free)
    if cfg is not None:
        _snapshot(cfg, out_dir)
    rows = [("rmse_offset_free", f"{report.rmse_offset_free:.6g} rad"),
            ("psnr", "inf" if not np.isfinite(report.psnr) else f"{report.psnr:.4g} dB")]
    if report.loss_final is not None:
        rows.append(("loss_final", f"{report.loss_final:.6g}"))
    if report.zernike_error is not None:
        rows += [(f"zernike_error[{n}]", f"{e:.6g} rad")
                 for n, e in enumerate(report.zernike_error)]
    print(format_table(rows))
    return EXIT_OK


# ---------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phasedecoder",
                                description="Blind phase retrieval with an untrained decoder.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="YAML run configuration (defaults if omitted)")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--seed", type=int, help="override the config seed")

    s = sub.add_parser("simulate", help="write a synthetic dataset")
    common(s)
    r = sub.add_parser("reconstruct", help="run a solver on a dataset")
    r.add_argument("dataset", help="dataset directory")
    r.add_argument("--method", choices=("dpd", "wf"), default="dpd")
    r.add_argument("--iterations", type=int, help="override the iteration budget")
    common(r)
    c = sub.add_parser("compare", help="score a result against the dataset truth")
    c.add_argument("result", help="result directory")
    c.add_argument("dataset", help="dataset directory")
    common(c, out_required=False)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        try:
            cfg = load_config(args.config)
        except OSError as exc:
            raise IOFailure(f"cannot read config {args.config}: {exc}") from exc
        cfg = cfg.with_overrides(seed=args.seed, iterations=getattr(args, "iterations", None))
        if args.command == "simulate":
            if args.seed is not None:
                data = dict(cfg.data)
                data["noise"] = dict(data["noise"], rng_seed=args.seed)
                cfg = RunConfig(data)
            return cmd_simulate(cfg, args.out)
        if args.command == "reconstruct":
            return cmd_reconstruct(args.dataset, args.method, cfg, args.out)
        return cmd_compare(args.result, args.dataset, args.out,
                           cfg if args.config else None)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IOFailure, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except PreconditionError as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except DivergenceError as exc:
        print(f"solver diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
