"""Command-line front end: ``rydarray {assemble,rabi,blockade,recapture,fit}``.

Exit codes: 0 success, 1 configuration/input error, 2 runtime error,
3 fit non-convergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, experiments, noise
from .config import ConfigError, RunConfig
from .dynamics import TimeSeries
from .lattice import LatticeError, PatternParseError, TrapArray, emit_occupancy

log = logging.getLogger("rydarray")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_NONCONVERGENCE = 0, 1, 2, 3
MAX_SNAPSHOTS = 10


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path: Path, payload):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _provenance(cfg):
    return ["config " + json.dumps(cfg.resolved(), sort_keys=True, default=_jsonable)]


def cmd_assemble(cfg: RunConfig, out: Path):
    array = cfg.array()
    pattern = cfg.pattern(array)
    trials = cfg.get("assembly", "trials")
    seed = cfg.get("run", "seed")
    records, aggregate = experiments.run_assembly(array, pattern, cfg.load_model(), cfg.execution(), trials, seed)
    snaps = out / "snapshots"
    snaps.mkdir(exist_ok=True)
    header = "".join(f"# {line}\n" for line in _provenance(cfg))
    for r in records[:MAX_SNAPSHOTS]:
        (snaps / f"trial_{r['trial']:04d}_final.txt").write_text(header + emit_occupancy(r["final_grid"]))
    rows = [{k: v for k, v in r.items() if k != "final_grid"} for r in records]
    write_json(out / "assemble_trials.json", {"config": cfg.resolved(), "seed": seed, "trials": rows})
    write_json(out / "assemble_summary.json", {"config": cfg.resolved(), "seed": seed, **aggregate})
    log.info("assembly success %d/%d (%.3f, 95%% CI %.3f-%.3f)", aggregate["successes"], trials, aggregate["success_rate"], aggregate["ci_low"], aggregate["ci_high"])
    return aggregate


def cmd_rabi(cfg: RunConfig, out: Path):
    base = cfg.array()
    n = cfg.get("beam", "region")
    region = TrapArray(rows=n, cols=n, pitch=base.pitch, trap_waist=base.trap_waist, trap_depth=base.trap_depth, trap_wavelength=base.trap_wavelength)
    cx, cy = experiments.region_center(region)
    b = cfg.sections["beam"]
    ex = cfg.sections["excitation"]
    res = experiments.run_checkerboard(
        region,
        (cx + b["offset_x"], cy + b["offset_y"]),
        b["waist"],
        b["rabi_max"],
        cfg.interaction(),
        cfg.noise(),
        cfg.get("run", "shots"),
        cfg.get("run", "seed"),
        ex["t_max"],
        ex["sample_dt"],
        with_neighbours=bool(b["neighbours"]),
    )
    series_dir = out / "rabi_sites"
    series_dir.mkdir(exist_ok=True)
    for site, ts in sorted(res["series"].items()):
        (series_dir / f"site_r{site.row}_c{site.col}.csv").write_text(ts.to_csv(_provenance(cfg) + [f"site {site.row} {site.col}"]))
    payload = {
        "config": cfg.resolved(),
        "seed": cfg.get("run", "seed"),
        "sites": [{"row": s.row, "col": s.col, **f.as_dict()} for s, f in sorted(res["fits"].items())],
        "beam_fit": res["beam"].as_dict(),
        "summary": res["summary"],
    }
    write_json(out / "rabi_fits.json", payload)
    log.info("rabi: Omega %.3f-%.3f MHz, mean damping %.3f /us, waist %.2f um", res["summary"]["rabi_min"], res["summary"]["rabi_max"], res["summary"]["damping_mean"], res["beam"].waist)
    return payload


def cmd_blockade(cfg: RunConfig, out: Path):
    ex = cfg.sections["excitation"]
    det = cfg.detection()
    res = experiments.run_blockade(
        ex["rabi"], cfg.interaction(), cfg.noise(), det, cfg.get("run", "shots"), cfg.get("run", "seed"), cfg.array().pitch, ex["t_max"], ex["sample_dt"]
    )
    prov = _provenance(cfg)
    for n, s in res["series"].items():
        for kind in ("observed", "corrected"):
            (out / f"blockade_N{n}_{kind}.csv").write_text(s[kind].to_csv(prov + [f"N {n} {kind}"]))
    if res["leakage"] is not None:
        lk = res["leakage"]
        lines = [f"# {p}" for p in prov] + ["time_us,p_double_finite,p_double_perfect"]
        lines += [f"{t:.9g},{a:.9g},{b:.9g}" for t, a, b in zip(lk["times"], lk["finite"], lk["perfect"])]
        (out / "blockade_leakage.csv").write_text("\n".join(lines) + "\n")
    payload = {
        "config": cfg.resolved(),
        "seed": cfg.get("run", "seed"),
        "detection": det.__dict__,
        "fits": {str(n): f.as_dict() for n, f in res["fits"].items()},
        "scaling": res["scaling"],
    }
    write_json(out / "blockade_scaling.json", payload)
    for row in res["scaling"]:
        log.info("N=%d  Omega_N=%.3f MHz  gamma=%.2f /us  ratio=%.3f(%.0f)", row["N"], row["rabi"], row["damping"], row["ratio"], 1000 * row["ratio_std"])
    return payload


def cmd_recapture(cfg: RunConfig, out: Path):
    r = cfg.sections["recapture"]
    states = tuple(s.strip() for s in str(r["states"]).split(",") if s.strip())
    results = experiments.run_recapture(cfg.array(), cfg.detection(), cfg.noise(), r["trials"], cfg.get("run", "seed"), r["ponderomotive_scale"], states)
    payload = {"config": cfg.resolved(), "seed": cfg.get("run", "seed"), "results": results}
    write_json(out / "recapture.json", payload)
    for rec in results:
        log.info("%s %s: p_recapture=%.4f [%.4f, %.4f]", rec["n_level_label"], rec["state"], rec["p_recapture"], rec["ci_low"], rec["ci_high"])
    return payload


def cmd_fit(cfg: RunConfig, out: Path):
    src = cfg.get("fit", "input")
    if not src or not Path(src).is_file():
        raise ConfigError(f"fit input not found: {src}")
    try:
        series = TimeSeries.from_csv(Path(src).read_text())
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"cannot read {src} as a dynamics CSV: {exc}") from exc
    if cfg.get("fit", "correct"):
        series = noise.static_correction(series, cfg.detection(), "inverse")
    obs = cfg.get("fit", "observable")
    if obs not in series.observables:
        raise ConfigError(f"observable {obs!r} not in {sorted(series.observables)}")
    fit = analysis.fit_rabi(series, obs)
    payload = {"config": cfg.resolved(), "seed": cfg.get("run", "seed"), "input": src, "observable": obs, **fit.as_dict()}
    write_json(out / f"fit_{Path(src).stem}.json", payload)
    log.info("fit %s: Omega=%.4f MHz gamma=%.4f /us rms=%.3g", obs, fit.rabi, fit.damping, fit.residual_rms)
    return payload


COMMANDS = {"assemble": cmd_assemble, "rabi": cmd_rabi, "blockade": cmd_blockade, "recapture": cmd_recapture, "fit": cmd_fit}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int, help="master RNG seed (required here or in [run])")
    common.add_argument("--out", help="output directory")
    common.add_argument("--shots", type=int, help="Monte Carlo shots per trace")
    common.add_argument("--preset", type=int, choices=(1, 2, 3), help="trap-array parameter set")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="rydarray", description="Assembled Rydberg atom array simulator")
    sub = p.add_subparsers(dest="command", required=True)
    a = sub.add_parser("assemble", parents=[common], help="repeated atom-by-atom assembly trials")
    a.add_argument("--pattern", help="ASCII target pattern file")
    a.add_argument("--trials", type=int)
    sub.add_parser("rabi", parents=[common], help="checkerboard Rabi oscillations and beam fit")
    sub.add_parser("blockade", parents=[common], help="collective Rabi oscillations of N=1,2,3 clusters")
    r = sub.add_parser("recapture", parents=[common], help="Rydberg recapture (detection error) Monte Carlo")
    r.add_argument("--trials", type=int)
    r.add_argument("--level", choices=("57D", "87D"))
    r.add_argument("--ponderomotive-scale", type=float)
    f = sub.add_parser("fit", parents=[common], help="damped Rabi fit of a dynamics CSV")
    f.add_argument("input", help="CSV in the dynamics TimeSeries format")
    f.add_argument("--observable")
    f.add_argument("--correct", action="store_true", default=None, help="undo static detection errors first")
    return p


def _overrides(args):
    o = {
        ("run", "seed"): args.seed,
        ("run", "out"): args.out,
        ("run", "shots"): args.shots,
        ("array", "preset"): args.preset,
    }
    cmd = args.command
    if cmd == "assemble":
        o[("pattern", "file")] = args.pattern
        o[("assembly", "trials")] = args.trials
    elif cmd == "recapture":
        o[("recapture", "trials")] = args.trials
        o[("interaction", "level")] = args.level
        o[("recapture", "ponderomotive_scale")] = args.ponderomotive_scale
    elif cmd == "fit":
        o[("fit", "input")] = args.input
        o[("fit", "observable")] = args.observable
        o[("fit", "correct")] = args.correct
    return o


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = RunConfig.load(args.command, args.config, _overrides(args))
        out = Path(cfg.get("run", "out"))
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out)
    except (ConfigError, LatticeError, PatternParseError, FileNotFoundError) as exc:
        print(f"rydarray: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except analysis.FitError as exc:
        print(f"rydarray: fit did not converge: {exc} {exc.diagnostics}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except Exception as exc:  # noqa: BLE001 - report any runtime failure through the exit code
        log.debug("runtime failure", exc_info=True)
        print(f"rydarray: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
