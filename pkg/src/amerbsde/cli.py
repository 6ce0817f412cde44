"""Command-line driver.

Usage: ``amerbsde <subcommand> <config.ini> [options]``. Exit codes: 0 ok,
1 configuration or input validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time

import numpy as np
import scipy

from . import __version__, checkpoint
from .config import ConfigError, RunConfig, load
from .cost import predicted_memory, time_training
from .fdoracle import FDGrid, ReductionError, interp_price_delta, reduce_geometric, solve_geometric
from .hedging import (FDProvider, NetProvider, SurfaceProvider, delta0, hedge_simulate,
                      model_exercise_flags, price0, stopping_times)
from .lsm import LSMMemoryError, lsm_delta0, lsm_fit, lsm_memory_floats
from .metrics import percent_error_delta, percent_error_point, spacetime_errors, surface_f1
from .simulate import PathCube, dump_paths_csv, generate_paths, load_paths, save_paths
from .training import TimestepLog, ValueSurface, backward_sweep

log = logging.getLogger("amerbsde")

HEDGE_STREAM = 3
EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


# ------------------------------------------------------------------ helpers

def _outdir(cfg: RunConfig, args) -> str:
    out = args.output or cfg.output
    os.makedirs(out, exist_ok=True)
    return out


def _training_paths(cfg: RunConfig) -> PathCube:
    t = cfg.train
    return generate_paths(cfg.market, t.N, t.C * t.M, cfg.seed)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    return x


def _results(command: str, **blocks) -> dict:
    base = {"command": command, "prices": {}, "deltas": {}, "errors": {}, "f1": None,
            "hedge": None, "timings": {}, "memory": {}}
    base.update(blocks)
    return _jsonable(base)


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)


def _write_manifest(out: str, cfg: RunConfig, command: str, wall: float, argv) -> None:
    _write_json(os.path.join(out, f"manifest_{command}.json"), {
        "command": command, "argv": list(argv), "config_sha256": cfg.digest(),
        "config": cfg.serialize(), "seed": cfg.seed, "workers": cfg.worker_count(),
        "wall_time_s": wall,
        "versions": {"amerbsde": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
    })


def _oracle_t0(cfg: RunConfig, grid):
    """FD price and full d-dimensional delta at the initial state."""
    mp = cfg.market
    _, _, s_eff = reduce_geometric(mp)
    u, du, _ = interp_price_delta(grid, s_eff, 0.0)
    return float(u), float(du) * s_eff / (mp.d * mp.s0)


# ------------------------------------------------------------------ subcommands

def cmd_simulate(cfg: RunConfig, args) -> dict:
    out = _outdir(cfg, args)
    t0 = time.perf_counter()
    paths = _training_paths(cfg)
    save_paths(paths, os.path.join(out, "paths.npz"))
    if args.csv:
        dump_paths_csv(paths, os.path.join(out, "paths.csv"))
    return _results("simulate", timings={"simulate_s": time.perf_counter() - t0},
                    memory={"path_floats": int(paths.S.size)})


def cmd_train(cfg: RunConfig, args) -> dict:
    out = _outdir(cfg, args)
    logs = TimestepLog()
    t0 = time.perf_counter()
    model, surf, paths = backward_sweep(cfg.market, cfg.payoff, cfg.train, workers=cfg.worker_count(),
                                        log_rows=logs.rows)
    wall = time.perf_counter() - t0
    checkpoint.save_file(model, os.path.join(out, "model" + checkpoint.EXTENSION))
    if args.surface_format == "csv":
        surf.dump_csv(os.path.join(out, "surface.csv"))
    else:
        np.savez(os.path.join(out, "surface.npz"), Y=surf.Y, Z=surf.Z, exercised=surf.exercised, v=surf.v)
    save_paths(paths, os.path.join(out, "paths.npz"))
    logs.dump_csv(os.path.join(out, "train_log.csv"))
    _, n_stop = stopping_times(surf.exercised, paths.dt)
    p, se = price0(paths, n_stop, cfg.payoff, cfg.market.r)
    dl, dse = delta0(paths, n_stop, cfg.payoff, cfg.market.r, cfg.market.s0)
    t = cfg.train
    return _results("train",
                    prices={"price0": p, "price0_se": se, "Y0": float(surf.Y[0, 0])},
                    deltas={"delta0": dl, "delta0_se": dse, "Z0": surf.Z[0, 0]},
                    timings={"train_s": wall},
                    memory=predicted_memory(t.N, t.C * t.M, cfg.market.d, cfg.lsm.chi))


def cmd_price(cfg: RunConfig, args) -> dict:
    if not args.model:
        raise ConfigError(["price: --model checkpoint is required"])
    model = checkpoint.load_file(args.model)
    paths = load_paths(args.paths) if args.paths else _training_paths(cfg)
    t0 = time.perf_counter()
    ex = model_exercise_flags(model, paths)
    _, n_stop = stopping_times(ex, paths.dt)
    p, se = price0(paths, n_stop, model.payoff, model.mp.r)
    dl, dse = delta0(paths, n_stop, model.payoff, model.mp.r, model.mp.s0)
    y0, z0 = model.value_and_delta(0, model.mp.s0)
    return _results("price", prices={"price0": p, "price0_se": se, "Y0": float(y0[0])},
                    deltas={"delta0": dl, "delta0_se": dse, "Z0": z0[0]},
                    timings={"price_s": time.perf_counter() - t0})


def cmd_lsm(cfg: RunConfig, args) -> dict:
    t, mp = cfg.train, cfg.market
    M = cfg.lsm.paths or t.C * t.M
    need = lsm_memory_floats(t.N, M, mp.d, cfg.lsm.chi)
    if need > cfg.lsm.memory_limit:
        raise LSMMemoryError(need, cfg.lsm.memory_limit)
    t0 = time.perf_counter()
    paths = generate_paths(mp, t.N, M, cfg.seed)
    res = lsm_fit(paths, mp, cfg.payoff, cfg.lsm.chi, cfg.lsm.memory_limit)
    dl, dse = lsm_delta0(paths, res, mp, cfg.payoff)
    return _results("lsm", prices={"price0": res.price, "price0_se": res.se},
                    deltas={"delta0": dl, "delta0_se": dse},
                    timings={"lsm_s": time.perf_counter() - t0},
                    memory={"lsm_floats": need})


def cmd_fd(cfg: RunConfig, args) -> dict:
    out = _outdir(cfg, args)
    t0 = time.perf_counter()
    grid = solve_geometric(cfg.market, cfg.oracle.nodes, cfg.oracle.steps)
    wall = time.perf_counter() - t0
    p, dl = _oracle_t0(cfg, grid)
    sub = slice(None, None, cfg.oracle.dump_every)
    keep = list(range(len(grid.tau)))[sub]
    if keep[-1] != len(grid.tau) - 1:
        keep.append(len(grid.tau) - 1)
    FDGrid(grid.s, grid.tau[keep], grid.V[keep], grid.dV[keep], grid.sigma, grid.drift, grid.r,
           grid.K, grid.T).dump_csv(os.path.join(out, "fd_grid.csv"))
    sig, drift, s_eff = reduce_geometric(cfg.market)
    return _results("fd", prices={"fd_price0": p, "s0_eff": s_eff},
                    deltas={"fd_delta0": dl},
                    timings={"fd_s": wall},
                    oracle={"sigma_eff": sig, "drift_eff": drift, "nodes": cfg.oracle.nodes,
                            "steps": cfg.oracle.steps})


def _load_surface(path: str) -> ValueSurface:
    if path.endswith(".npz"):
        z = np.load(path)
        return ValueSurface(z["Y"], z["Z"], z["exercised"], z["v"])
    return ValueSurface.load_csv(path)


def cmd_hedge(cfg: RunConfig, args) -> dict:
    mp, t, h = cfg.market, cfg.train, cfg.hedge
    kind = args.provider or h.provider
    if kind == "surface":
        if not (args.surface and args.paths):
            raise ConfigError(["hedge: the surface provider needs --surface and --paths"])
        provider = SurfaceProvider(_load_surface(args.surface))
        paths = load_paths(args.paths)
    else:
        paths = generate_paths(mp, t.N, h.paths, cfg.seed, stream=HEDGE_STREAM)
        if kind == "fd":
            provider = FDProvider(solve_geometric(mp, cfg.oracle.nodes, cfg.oracle.steps), mp, t.N)
        else:
            if not args.model:
                raise ConfigError(["hedge: the net provider needs --model"])
            provider = NetProvider(checkpoint.load_file(args.model))
    out = _outdir(cfg, args)
    t0 = time.perf_counter()
    rep = hedge_simulate(provider, paths, mp, cfg.payoff, h.intervals, h.bins)
    rep.dump_json(os.path.join(out, f"hedge_{kind}.json"))
    rep.dump_hist_csv(os.path.join(out, f"hedge_{kind}_hist.csv"))
    return _results("hedge", hedge={"provider": kind, "intervals": h.intervals, "paths": paths.M,
                                    "mean": rep.mean, "std": rep.std},
                    timings={"hedge_s": time.perf_counter() - t0})


def cmd_compare(cfg: RunConfig, args) -> dict:
    if not (args.surface and args.paths):
        raise ConfigError(["compare: --surface and --paths are required"])
    surf = _load_surface(args.surface)
    paths = load_paths(args.paths)
    grid = solve_geometric(cfg.market, cfg.oracle.nodes, cfg.oracle.steps)
    fd_p, fd_d = _oracle_t0(cfg, grid)
    _, n_stop = stopping_times(surf.exercised, paths.dt)
    p, _ = price0(paths, n_stop, cfg.payoff, cfg.market.r)
    dl, _ = delta0(paths, n_stop, cfg.payoff, cfg.market.r, cfg.market.s0)
    st = spacetime_errors(surf, grid, paths, cfg.market)
    errors = {"price0_pct": percent_error_point(p, fd_p), "delta0_pct": percent_error_delta(dl, fd_d),
              **{f"spacetime_{k}": v for k, v in st.to_dict().items()}}
    refs = {}
    if args.reference_price is not None:
        refs["reference_price"] = args.reference_price
        errors["price0_vs_reference_pct"] = percent_error_point(p, args.reference_price)
    return _results("compare", prices={"price0": p, "fd_price0": fd_p, **refs},
                    deltas={"delta0": dl, "fd_delta0": fd_d}, errors=errors,
                    f1=surface_f1(surf, grid, paths))


def cmd_cost(cfg: RunConfig, args) -> dict:
    t, mp = cfg.train, cfg.market
    mem = predicted_memory(t.N, t.C * t.M, mp.d, cfg.lsm.chi)
    mem["lsm_guard_limit"] = cfg.lsm.memory_limit
    mem["lsm_refused"] = mem["lsm_floats"] > cfg.lsm.memory_limit
    timings = {}
    if args.measure:
        dims = [int(x) for x in args.dims.split(",")]
        fit = time_training(dims)
        timings = {"quadratic_fit": fit.to_dict()}
    return _results("cost", memory=mem, timings=timings)


COMMANDS = {
    "simulate": cmd_simulate, "train": cmd_train, "price": cmd_price, "lsm": cmd_lsm,
    "fd": cmd_fd, "hedge": cmd_hedge, "compare": cmd_compare, "cost": cmd_cost,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="amerbsde", description="American basket options via BSDE-trained networks")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("config", help="INI run configuration")
    ap.add_argument("--output", help="output directory (overrides run.output)")
    ap.add_argument("--model", help="checkpoint (.bsdenet) for price/hedge")
    ap.add_argument("--paths", help="path cube (.npz) for price/hedge/compare")
    ap.add_argument("--surface", help="value surface (.csv or .npz) for hedge/compare")
    ap.add_argument("--provider", choices=["net", "fd", "surface"], help="hedge provider override")
    ap.add_argument("--surface-format", choices=["csv", "npz"], default="csv")
    ap.add_argument("--csv", action="store_true", help="simulate: also write paths.csv")
    ap.add_argument("--reference-price", type=float, help="compare: external reference price")
    ap.add_argument("--measure", action="store_true", help="cost: time training across --dims")
    ap.add_argument("--dims", default="2,4,8,16")
    ap.add_argument("--error-json", action="store_true", help="print failures as JSON on stderr")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _fail(args, code: int, exc: BaseException) -> int:
    problems = getattr(exc, "problems", [str(exc)])
    if getattr(args, "error_json", False):
        print(json.dumps({"error": type(exc).__name__, "problems": problems, "exit_code": code}), file=sys.stderr)
    else:
        for p in problems:
            print(f"error: {p}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load(args.config)
    except ConfigError as exc:
        return _fail(args, EXIT_VALIDATION, exc)
    t0 = time.perf_counter()
    try:
        res = COMMANDS[args.command](cfg, args)
    except (ConfigError, ReductionError, ValueError) as exc:
        return _fail(args, EXIT_VALIDATION, exc)
    except (MemoryError, RuntimeError, FloatingPointError, OSError, KeyError) as exc:
        return _fail(args, EXIT_RUNTIME, exc)
    out = _outdir(cfg, args)
    wall = time.perf_counter() - t0
    res["timings"]["wall_s"] = wall
    _write_json(os.path.join(out, f"results_{args.command}.json"), res)
    _write_manifest(out, cfg, args.command, wall, argv)
    print(json.dumps(_jsonable(res["prices"] or res["memory"] or res["hedge"] or {})))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
