"""Command-line entry point: ``jumpflux <command> --config PATH``.

Every run writes ``manifest.json`` with the resolved configuration before
computing and marks it complete afterwards.  A directory holding a complete
manifest is only reused with ``--force``.  Without ``--out`` the output goes
to ``$JUMPFLUX_OUTPUT_ROOT/<experiment id>`` (``./runs`` when unset).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from jumpflux import __version__
from jumpflux.config import (ConfigError, apply_overrides, experiment_spec, initial_spec,
                             load_config, load_shipped, preset_params, shipped_configs, sweep_values)
from jumpflux.experiments import (make_initial, run_convergence, run_parameter_sweep,
                                  run_time_to_error, sample_coefficient)
from jumpflux.mesh import build_mesh
from jumpflux.solver import SolverConfig, SolverError, burgers_flux, solve

OUTPUT_ROOT_ENV = "JUMPFLUX_OUTPUT_ROOT"
COMMANDS = ("solve", "convergence", "time-to-error", "sweep", "sample-coefficient")

logger = logging.getLogger("jumpflux")


class RunError(RuntimeError):
    pass


def _jsonable(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def write_manifest(out: Path, payload: dict) -> None:
    """Write ``manifest.json`` atomically (temp file then rename)."""
    tmp = out / "manifest.json.tmp"
    tmp.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    os.replace(tmp, out / "manifest.json")


def prepare_output(out: Path, force: bool) -> None:
    manifest = out / "manifest.json"
    if manifest.is_file():
        try:
            status = json.loads(manifest.read_text()).get("status")
        except json.JSONDecodeError:
            status = None
        if status == "complete" and not force:
            raise RunError(f"{out} holds a completed run; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# -- commands ------------------------------------------------------------------

def cmd_solve(cfg: dict, out: Path) -> None:
    """One coefficient sample, one mesh, snapshots and mass trace."""
    spec = experiment_spec(cfg)
    coefficient = sample_coefficient(spec, 0)
    mesh = build_mesh(cfg["mesh"]["strategy"], int(cfg["mesh"]["n_cells"]),
                      coefficient.discontinuities, spec.domain)
    s = cfg["solver"]
    config = SolverConfig(integrator=s["integrator"], cfl_number=float(s["cfl_number"]),
                          t_end=float(s["t_end"]),
                          dt=None if s["implicit_dt"] is None else float(s["implicit_dt"]))
    n_out = max(int(s["n_outputs"]), 1)
    times = np.linspace(0.0, config.t_end, n_out + 1)
    sol = solve(burgers_flux(coefficient), mesh, make_initial(initial_spec(cfg)), config, times)
    sol.snapshots_to_csv(out / "snapshots.csv")
    sol.mass_to_csv(out / "mass.csv")
    mesh.to_csv(out / "mesh.csv")
    coefficient.to_csv(out / "coefficient.csv", np.linspace(*spec.domain, 2001))
    _write_rows(out / "diagnostics.csv", ["n_cells", "min_h", "n_steps", "max_mass_drift",
                                          "flux_bound"],
                [[mesh.n_cells, repr(mesh.min_h), sol.n_steps, repr(sol.max_mass_drift),
                  repr(sol.flux_bound)]])


def cmd_convergence(cfg: dict, out: Path) -> None:
    report = run_convergence(experiment_spec(cfg))
    report.write(out)
    _report_failures(report)


def cmd_time_to_error(cfg: dict, out: Path) -> None:
    report = run_time_to_error(experiment_spec(cfg))
    report.write(out)
    _report_failures(report)


def cmd_sweep(cfg: dict, out: Path) -> None:
    axis = cfg["sweep"]["axis"]
    if axis is None:
        raise ConfigError("sweep.axis is required for the sweep command")
    reports = run_parameter_sweep(axis, experiment_spec(cfg), sweep_values(cfg),
                                  cfg["sweep"]["mode"])
    rows = []
    for report in reports:
        sub = out / report.spec.name
        report.write(sub)
        _report_failures(report)
        for strategy, integrator in report.groups():
            for norm in report.spec.norms:
                rows.append([report.spec.name, strategy, integrator, norm,
                             repr(report.mean_rate(strategy, norm, integrator)),
                             repr(report.median_rate(strategy, norm, integrator))])
    _write_rows(out / "sweep.csv", ["run", "strategy", "integrator", "norm", "mean_error_rate",
                                    "median_rate"], rows)


def cmd_sample_coefficient(cfg: dict, out: Path) -> None:
    """Coefficient realizations on a plotting grid plus their discontinuities."""
    spec = experiment_spec(cfg)
    count = int(cfg["sampling"]["count"])
    grid = np.linspace(*spec.domain, int(cfg["sampling"]["grid_points"]))
    rows, disc_rows = [], []
    for i in range(count):
        c = sample_coefficient(spec, i)
        values = c(grid)
        rows.extend([i, repr(float(x)), repr(float(v))] for x, v in zip(grid, values))
        disc_rows.extend([i, repr(float(d))] for d in c.discontinuities)
    _write_rows(out / "coefficients.csv", ["sample", "x", "a"], rows)
    _write_rows(out / "discontinuities.csv", ["sample", "x"], disc_rows)


def _report_failures(report) -> None:
    if report.failures:
        logger.warning("%d sample(s) failed and were excluded", len(report.failures))


HANDLERS = {
    "solve": cmd_solve,
    "convergence": cmd_convergence,
    "time-to-error": cmd_time_to_error,
    "sweep": cmd_sweep,
    "sample-coefficient": cmd_sample_coefficient,
}


# -- argument handling --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jumpflux", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HANDLERS[name].__doc__ and HANDLERS[name].__doc__.splitlines()[0])
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", type=Path, help="YAML experiment config")
        src.add_argument("--preset", help="id of a shipped config (see `jumpflux presets`)")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--threads", type=int, help="worker threads (default: all cores)")
        p.add_argument("--force", action="store_true", help="overwrite a completed run")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="override one config value")
        p.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("presets", help="list shipped configs")
    return parser


def resolve_config(args) -> dict:
    cfg = load_config(args.config) if args.config is not None else load_shipped(args.preset)
    cfg = apply_overrides(cfg, args.overrides)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed must be nonnegative")
        cfg["experiment"]["seed"] = args.seed
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("threads must be positive")
        cfg["experiment"]["threads"] = args.threads
    return cfg


def output_dir(args, cfg: dict) -> Path:
    if args.out is not None:
        return args.out
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return root / str(cfg["experiment"]["id"])


def run(args) -> int:
    try:
        cfg = resolve_config(args)
        experiment_spec(cfg)  # validate before touching the filesystem
        preset_params(cfg)
    except ConfigError as exc:
        print(f"jumpflux: config error: {exc}", file=sys.stderr)
        return 2
    out = output_dir(args, cfg)
    try:
        prepare_output(out, args.force)
    except RunError as exc:
        print(f"jumpflux: {exc}", file=sys.stderr)
        return 3
    cfg["experiment"]["threads"] = experiment_spec(cfg).n_threads
    manifest = {"command": args.command, "config": cfg, "seed": cfg["experiment"]["seed"],
                "version": __version__, "status": "running"}
    write_manifest(out, manifest)
    try:
        HANDLERS[args.command](cfg, out)
    except (ConfigError, SolverError, ValueError) as exc:
        manifest["status"] = "failed"
        manifest["error"] = str(exc)
        write_manifest(out, manifest)
        print(f"jumpflux: {args.command} failed: {exc}", file=sys.stderr)
        return 1
    manifest["status"] = "complete"
    write_manifest(out, manifest)
    print(f"jumpflux: wrote {out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        print("\n".join(shipped_configs()))
        return 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
