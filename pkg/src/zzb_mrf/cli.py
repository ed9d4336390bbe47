"""Command line entry point.

Every command writes its artifacts plus ``manifest.json`` into ``--out-dir``.
The manifest holds the fully resolved configuration and options, so
``zzb-mrf replay manifest.json`` regenerates identical artifacts.

Exit status: 0 ok, 2 usage, 3 parse error, 4 precondition or
infeasibility, 5 numeric failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import io
from .bounds import NoiseModel, TissueSpec, crb, monte_carlo_mse, zzb
from .config import REFERENCE_CFG, RunConfig, load_config
from .epg_sim import Schedule, Tissue, simulate_fingerprint
from .errors import NumericError, ParseError, PreconditionError
from .mrf_pipeline import (
    build_dictionary,
    compare_schemes,
    default_t1_grid,
    default_t2_grid,
    desk_phantom,
    match,
)
from .seqopt import DesignProblem, SolverConfig, conventional_schedule, optimize, reference_noise

log = logging.getLogger("zzb_mrf")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARSE = 3
EXIT_PRECONDITION = 4
EXIT_NUMERIC = 5

MANIFEST = "manifest.json"


# shared resolution helpers

def reference_schedule(cfg: RunConfig, n_frames: int) -> Schedule:
    return conventional_schedule(
        n_frames, cfg.seed, cfg.echo_time_ms, cfg.first_fa_bounds_deg, cfg.fa_bounds_deg, cfg.tr_bounds_ms
    )


def resolve_sigma2(cfg: RunConfig, n_frames: int) -> float:
    """Explicit sigma2, else the peak-SNR target measured on the conventional train of the same length."""
    if cfg.sigma2 is not None:
        return cfg.sigma2
    if cfg.target_snr is None:
        raise PreconditionError("set either sigma2 or target_snr")
    return reference_noise(reference_schedule(cfg, n_frames), cfg.specs, cfg.target_snr, cfg.epg).sigma2


def design_problem(cfg: RunConfig, sigma2: float) -> DesignProblem:
    return DesignProblem.standard(
        cfg.specs,
        NoiseModel(sigma2),
        cfg.frames,
        cfg.first_fa_bounds_deg,
        cfg.fa_bounds_deg,
        cfg.tr_bounds_ms,
        cfg.fa_slew_deg,
        echo_time=cfg.echo_time_ms,
        quad=cfg.quad,
        epg=cfg.epg,
        objective=cfg.objective,
    )


def parse_grid(text: str | None, default):
    """``lin:a:b:step`` (inclusive arange), ``log:a:b:k`` or a comma list."""
    if text is None:
        return default()
    try:
        if text.startswith("lin:"):
            a, b, step = (float(x) for x in text[4:].split(":"))
            if step <= 0:
                raise ValueError("step must be positive")
            return np.arange(a, b + 0.5 * step, step)
        if text.startswith("log:"):
            a, b, k = text[4:].split(":")
            return np.geomspace(float(a), float(b), int(k))
        return np.array([float(x) for x in text.split(",")])
    except ValueError as exc:
        raise ParseError(f"bad grid {text!r}: {exc}") from exc


def parse_sweep(text: str) -> list[float]:
    """``a:b:k`` gives k log-spaced variances from a to b inclusive."""
    try:
        a, b, k = text.split(":")
        a, b, k = float(a), float(b), int(k)
    except ValueError as exc:
        raise ParseError(f"--sweep-sigma2 expects a:b:k, got {text!r}") from exc
    if not (0 < a and 0 < b and k >= 1):
        raise ParseError("--sweep-sigma2 needs a, b > 0 and k >= 1")
    return np.geomspace(a, b, k).tolist() if k > 1 else [a]


def _pair(text: str, what: str) -> tuple[float, float]:
    try:
        a, b = (float(x) for x in text.split(","))
    except ValueError as exc:
        raise ParseError(f"{what} expects two comma-separated numbers, got {text!r}") from exc
    return a, b


def _spec(text: str) -> TissueSpec:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) not in (4, 5):
        raise ParseError(f"--spec expects varying,min,max,fixed[,weight], got {text!r}")
    try:
        nums = [float(p) for p in parts[1:]]
    except ValueError as exc:
        raise ParseError(f"bad --spec {text!r}") from exc
    return TissueSpec(parts[0].upper(), *nums)


def _phantom(opts: dict):
    if opts.get("phantom_labels"):
        if not opts.get("phantom_tissues"):
            raise PreconditionError("--phantom-labels needs --phantom-tissues")
        return io.read_phantom(opts["phantom_labels"], opts["phantom_tissues"])
    return desk_phantom(opts.get("phantom_size", 64))


def _selected_specs(cfg: RunConfig, opts: dict) -> list[tuple[int, TissueSpec]]:
    ids = opts.get("spec_ids")
    if not ids:
        return list(enumerate(cfg.specs, start=1))
    out = []
    for i in ids:
        if not 1 <= i <= len(cfg.specs):
            raise PreconditionError(f"spec id {i} outside 1..{len(cfg.specs)}")
        out.append((i, cfg.specs[i - 1]))
    return out


def _inputs(opts: dict) -> dict:
    keys = ("schedule", "initial", "dictionary", "fingerprint", "phantom_labels", "phantom_tissues")
    paths = [opts[k] for k in keys if opts.get(k)]
    paths += [p for _, p in opts.get("schemes", [])]
    return {p: io.sha256(p) for p in paths}


# commands: (cfg, opts, out_dir) -> (artifact names, summary dict)

def run_simulate(cfg: RunConfig, opts: dict, out: Path):
    if cfg.tissue is None:
        raise PreconditionError("no tissue given: pass --tissue t1,t2 or set 'tissue' in the config")
    schedule = io.read_schedule(opts["schedule"], cfg.echo_time_ms)
    sig = simulate_fingerprint(schedule, Tissue(*cfg.tissue), cfg.epg)
    io.write_fingerprint(out / "fingerprint.csv", sig)
    return ["fingerprint.csv"], {"n_frames": schedule.n_frames}


def _run_bounds(kind: str, cfg: RunConfig, opts: dict, out: Path):
    schedule = io.read_schedule(opts["schedule"], cfg.echo_time_ms)
    sigmas = opts.get("sweep") or [resolve_sigma2(cfg, schedule.n_frames)]
    mc_trials = int(opts.get("mc_trials") or 0)
    rows = []
    for sid, spec in _selected_specs(cfg, opts):
        for s2 in sigmas:
            noise = NoiseModel(s2)
            z = zzb(schedule, spec, noise, cfg.epg, cfg.quad) if kind == "zzb" else float("nan")
            c = crb(schedule, spec.center, noise, cfg.epg, spec.varying) if kind == "crb" else float("nan")
            mc = float("nan")
            if mc_trials:
                mc = monte_carlo_mse(schedule, spec, noise, cfg.epg, cfg.quad, mc_trials, cfg.seed).mse
            rows.append((sid, s2, z, c, mc, cfg.n_grid, mc_trials))
    io.write_csv(out / "bounds.csv", io.BOUNDS_HEADER, rows)
    return ["bounds.csv"], {"sigma2": sigmas, "n_rows": len(rows)}


def run_zzb(cfg, opts, out):
    return _run_bounds("zzb", cfg, opts, out)


def run_crb(cfg, opts, out):
    return _run_bounds("crb", cfg, opts, out)


def run_optimize(cfg: RunConfig, opts: dict, out: Path):
    sigma2 = resolve_sigma2(cfg, cfg.frames)
    problem = design_problem(cfg, sigma2)
    if opts.get("initial"):
        initial = io.read_schedule(opts["initial"], cfg.echo_time_ms)
    else:
        initial = reference_schedule(cfg, cfg.frames)
    solver = SolverConfig(cfg.max_iters, cfg.rel_tol, cfg.fd_rel_step, cfg.step_init)
    res = optimize(initial, problem, solver)
    io.write_schedule(out / "schedule.csv", res.schedule)
    io.write_cost_history(out / "cost_history.csv", res.cost_history)
    io.write_schedule(out / "fa_tr_plot.csv", res.schedule)
    summary = {
        "sigma2": sigma2,
        "initial_cost": res.initial_cost,
        "final_cost": res.final_cost,
        "iterations": res.iterations,
        "termination": res.termination,
        "n_cost_evals": res.n_cost_evals,
    }
    return ["schedule.csv", "cost_history.csv", "fa_tr_plot.csv"], summary


def run_dict(cfg: RunConfig, opts: dict, out: Path):
    schedule = io.read_schedule(opts["schedule"], cfg.echo_time_ms)
    d = build_dictionary(
        schedule,
        parse_grid(opts.get("t1_grid"), default_t1_grid),
        parse_grid(opts.get("t2_grid"), default_t2_grid),
        cfg.epg,
        Path(opts["schedule"]).stem,
    )
    io.save_dictionary(out / "dictionary.csv", d)
    return ["dictionary.csv"], {"n_atoms": len(d)}


def run_match(cfg: RunConfig, opts: dict, out: Path):
    d = io.load_dictionary(opts["dictionary"])
    t, score = match(d, io.read_fingerprint(opts["fingerprint"]))
    io.write_csv(out / "match.csv", io.MATCH_HEADER, [(t.t1, t.t2, score)])
    return ["match.csv"], {"t1_ms": t.t1, "t2_ms": t.t2, "score": score}


def _run_schemes(cfg: RunConfig, opts: dict, out: Path, schemes: list, table: str):
    schedules = {name: io.read_schedule(path, cfg.echo_time_ms) for name, path in schemes}
    if len(schedules) != len(schemes):
        raise PreconditionError("scheme names must be unique")
    n = next(iter(schedules.values())).n_frames
    sigma2 = resolve_sigma2(cfg, n)
    phantom = _phantom(opts)
    rows = compare_schemes(
        schedules,
        phantom,
        sigma2,
        parse_grid(opts.get("t1_grid"), default_t1_grid),
        parse_grid(opts.get("t2_grid"), default_t2_grid),
        cfg.epg,
        cfg.seed,
    )
    truth = phantom.truth()
    files = [table]
    io.write_csv(
        out / table, io.COMPARISON_HEADER, [(r.scheme, r.t1_nmse, r.t2_nmse, r.sigma2, r.n_frames, r.seed) for r in rows]
    )
    for r in rows:
        for p, est, ref in (("t1", r.maps.t1_map, truth.t1_map), ("t2", r.maps.t2_map, truth.t2_map)):
            io.write_grid(out / f"{r.scheme}_{p}_map.csv", est)
            io.write_grid(out / f"{r.scheme}_{p}_error.csv", np.where(truth.mask, est - ref, 0.0))
            files += [f"{r.scheme}_{p}_map.csv", f"{r.scheme}_{p}_error.csv"]
    summary = {"sigma2": sigma2, "nmse": {r.scheme: [r.t1_nmse, r.t2_nmse] for r in rows}, "schedule_ids": list(schedules)}
    return files, summary


def run_evaluate(cfg: RunConfig, opts: dict, out: Path):
    name = Path(opts["schedule"]).stem
    return _run_schemes(cfg, opts, out, [(name, opts["schedule"])], "evaluation.csv")


def run_compare(cfg: RunConfig, opts: dict, out: Path):
    return _run_schemes(cfg, opts, out, [tuple(s) for s in opts["schemes"]], "comparison.csv")


def run_phantom(cfg: RunConfig, opts: dict, out: Path):
    io.write_phantom(out / "phantom_labels.csv", out / "phantom_tissues.csv", desk_phantom(opts.get("phantom_size", 64)))
    return ["phantom_labels.csv", "phantom_tissues.csv"], {}


COMMANDS = {
    "simulate": run_simulate,
    "zzb": run_zzb,
    "crb": run_crb,
    "optimize": run_optimize,
    "dict": run_dict,
    "match": run_match,
    "evaluate": run_evaluate,
    "compare": run_compare,
    "phantom": run_phantom,
}


def execute(command: str, cfg: RunConfig, opts: dict, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inputs = _inputs(opts)
    t0 = time.perf_counter()
    artifacts, summary = COMMANDS[command](cfg, opts, out)
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "options": opts,
        "inputs": inputs,
        "seeds": [cfg.seed],
        "artifacts": artifacts,
        "summary": summary,
        "duration_s": time.perf_counter() - t0,
        "version": __version__,
    }
    io.write_manifest(out / MANIFEST, manifest)
    return manifest


def replay(manifest_path, out_dir) -> dict:
    m = io.read_manifest(manifest_path)
    if m.get("command") not in COMMANDS:
        raise ParseError(f"unknown command {m.get('command')!r}", manifest_path)
    for path, digest in m.get("inputs", {}).items():
        if not Path(path).exists() or io.sha256(path) != digest:
            raise PreconditionError(f"input {path} is missing or changed since the manifest was written")
    return execute(m["command"], RunConfig.from_dict(m["config"]), m["options"], out_dir)


# argument parsing

def _common(p: argparse.ArgumentParser, schedule=False):
    p.add_argument("--config", default=str(REFERENCE_CFG), help="run configuration file")
    p.add_argument("-o", "--out-dir", default=".", help="directory for artifacts and manifest.json")
    p.add_argument("--seed", type=int)
    p.add_argument("--frames", type=int)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--sigma2", type=float, help="noise variance")
    g.add_argument("--target-snr", type=float, help="peak SNR on the conventional train")
    p.add_argument("--n-grid", type=int)
    if schedule:
        p.add_argument("--schedule", required=True, help="CSV with header frame,fa_deg,tr_ms")


def _phantom_args(p):
    p.add_argument("--phantom-labels", help="CSV label grid (-1 = background)")
    p.add_argument("--phantom-tissues", help="CSV with header label,t1_ms,t2_ms")
    p.add_argument("--phantom-size", type=int, default=64)
    p.add_argument("--t1-grid", help="lin:a:b:step, log:a:b:k or a comma list (ms)")
    p.add_argument("--t2-grid", help="lin:a:b:step, log:a:b:k or a comma list (ms)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="zzb-mrf", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="fingerprint of one tissue")
    _common(p, schedule=True)
    p.add_argument("--tissue", help="t1,t2 in ms")

    for name in ("zzb", "crb"):
        p = sub.add_parser(name, help=f"{name.upper()} per spec")
        _common(p, schedule=True)
        p.add_argument("--spec", action="append", help="varying,min,max,fixed[,weight]; replaces config specs")
        p.add_argument("--spec-id", type=int, action="append", help="1-based row of the config specs")
        p.add_argument("--sweep-sigma2", help="a:b:k, k log-spaced variances")
        p.add_argument("--mc-trials", type=int, default=0, help="also run the Monte-Carlo ML estimator")

    p = sub.add_parser("optimize", help="design a schedule")
    _common(p)
    p.add_argument("--initial", help="starting schedule CSV (default: conventional)")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--tol", type=float, help="relative cost-decrease tolerance")
    p.add_argument("--objective", choices=("zzb", "crb"))

    p = sub.add_parser("dict", help="build a dictionary")
    _common(p, schedule=True)
    p.add_argument("--t1-grid")
    p.add_argument("--t2-grid")

    p = sub.add_parser("match", help="match one fingerprint")
    _common(p)
    p.add_argument("--dictionary", required=True)
    p.add_argument("--fingerprint", required=True, help="CSV with header frame,signal")

    p = sub.add_parser("evaluate", help="reconstruct the phantom with one schedule")
    _common(p, schedule=True)
    _phantom_args(p)

    p = sub.add_parser("compare", help="reconstruct the phantom with several schedules")
    _common(p)
    p.add_argument("schemes", nargs="+", help="name=schedule.csv")
    _phantom_args(p)

    p = sub.add_parser("phantom", help="write the built-in phantom as CSV")
    p.add_argument("-o", "--out-dir", default=".")
    p.add_argument("--phantom-size", type=int, default=64)

    p = sub.add_parser("replay", help="rerun a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("-o", "--out-dir", default=".")
    return ap


def resolve(args: argparse.Namespace) -> tuple[RunConfig, dict]:
    """Config file plus flag overrides, and the command's remaining options."""
    cfg = load_config(getattr(args, "config", None) or REFERENCE_CFG)
    over = {
        "seed": "seed",
        "frames": "frames",
        "n_grid": "n_grid",
        "max_iters": "max_iters",
        "tol": "rel_tol",
        "objective": "objective",
    }
    for flag, key in over.items():
        v = getattr(args, flag, None)
        if v is not None:
            setattr(cfg, key, v)
    if getattr(args, "sigma2", None) is not None:
        cfg.sigma2, cfg.target_snr = args.sigma2, None
    if getattr(args, "target_snr", None) is not None:
        cfg.sigma2, cfg.target_snr = None, args.target_snr
    if getattr(args, "tissue", None):
        cfg.tissue = _pair(args.tissue, "--tissue")
    if getattr(args, "spec", None):
        cfg.specs = [_spec(s) for s in args.spec]
    cfg = RunConfig.from_dict(cfg.to_dict())  # normalize types

    opts = {}
    for key in ("schedule", "initial", "dictionary", "fingerprint", "phantom_labels", "phantom_tissues"):
        v = getattr(args, key, None)
        if v:
            opts[key] = str(Path(v).resolve())
    for key in ("t1_grid", "t2_grid", "phantom_size", "mc_trials"):
        v = getattr(args, key, None)
        if v is not None:
            opts[key] = v
    if getattr(args, "spec_id", None):
        opts["spec_ids"] = list(args.spec_id)
    if getattr(args, "sweep_sigma2", None):
        opts["sweep"] = parse_sweep(args.sweep_sigma2)
    if getattr(args, "schemes", None):
        schemes = []
        for s in args.schemes:
            name, sep, path = s.partition("=")
            if not sep or not name or not path:
                raise ParseError(f"scheme must be name=path, got {s!r}")
            schemes.append([name, str(Path(path).resolve())])
        opts["schemes"] = schemes
    return cfg, opts


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "replay":
            m = replay(args.manifest, args.out_dir)
        else:
            cfg, opts = resolve(args)
            m = execute(args.command, cfg, opts, args.out_dir)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except PreconditionError as exc:
        print(f"precondition error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for a in m["artifacts"]:
        print(Path(args.out_dir) / a)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
