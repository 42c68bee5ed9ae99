"""Monte Carlo strong-error studies: convergence, time-to-error and sweeps.

Every sample draws one coefficient realization from its own seeded stream
and solves on all meshing strategies and refinement levels, so error
differences between strategies isolate discretisation effects.  Errors are
measured against a reference solution on a wave-cell mesh with
``reference_factor`` times as many base cells as the finest level.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from jumpflux._validation import sample_rng
from jumpflux.jumpfield import PRESETS, make_preset
from jumpflux.mesh import Mesh, build_mesh
from jumpflux.solver import INTEGRATORS, SolverConfig, SolverError, Solution, burgers_flux, solve

logger = logging.getLogger(__name__)

STRATEGIES = ("equidistant", "jump_adapted", "wave_cell")
NORMS = ("L1", "L2")
SWEEP_AXES = {
    # axis: (preset, parameter name, values studied)
    "jump_distance": ("up_jump", "delta", (2.0**-4, 2.0**-6, 2.0**-8)),
    "jump_count": ("alternating_fixed", "n_jumps", (4, 16, 64)),
    "matern_smoothness": ("lognormal", "nu", (0.5, 1.0, math.inf)),
    "correlation_length": ("lognormal", "correlation_length", (0.01, 0.05, 0.1)),
    "jump_width": ("two_level", "width", (1e-2, 1e-3, 1e-4)),
}


@dataclass
class ExperimentSpec:
    name: str = "experiment"
    preset: str = "alternating_exponential"
    preset_params: dict = field(default_factory=dict)
    initial: dict = field(default_factory=lambda: {"kind": "sine", "kappa": 0.3})
    strategies: tuple = STRATEGIES
    levels: tuple = (64, 128, 256, 512)
    reference_factor: int = 4
    reference_strategy: str = "wave_cell"
    integrators: tuple = ("forward_euler",)
    samples: int = 20
    seed: int = 0
    norms: tuple = NORMS
    t_end: float = 1.0
    cfl_number: float = 0.9
    implicit_dt: float | None = None
    threads: int | None = None
    domain: tuple = (0.0, 1.0)

    def __post_init__(self):
        self.strategies = tuple(self.strategies)
        self.levels = tuple(int(n) for n in self.levels)
        self.integrators = tuple(self.integrators)
        self.norms = tuple(self.norms)
        self.domain = tuple(float(v) for v in self.domain)
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")
        if not self.levels or any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("refinement levels must be strictly increasing")
        if int(self.reference_factor) < 4:
            raise ValueError("reference_factor must be at least 4")
        for s in (*self.strategies, self.reference_strategy):
            if s not in STRATEGIES:
                raise ValueError(f"unknown meshing strategy {s!r}")
        for i in self.integrators:
            if i not in INTEGRATORS:
                raise ValueError(f"unknown integrator {i!r}")
        for nrm in self.norms:
            if nrm not in NORMS:
                raise ValueError(f"unknown norm {nrm!r}")
        if self.samples < 1:
            raise ValueError("need at least one sample")
        make_initial(self.initial)

    def resolved(self) -> dict:
        d = asdict(self)
        d["threads"] = self.n_threads
        return d

    @property
    def n_threads(self) -> int:
        return int(self.threads or os.cpu_count() or 1)


def make_initial(initial: dict):
    """Initial data from its config description (``sine``, ``riemann`` or ``constant``)."""
    kind = initial.get("kind", "sine")
    if kind == "sine":
        kappa = float(initial.get("kappa", 0.3))
        return lambda x: kappa * np.sin(np.pi * np.asarray(x))
    if kind == "riemann":
        left, right = float(initial.get("left", 1.0)), float(initial.get("right", 0.0))
        x0 = float(initial.get("x0", 0.5))
        return lambda x: np.where(np.asarray(x) < x0, left, right)
    if kind == "constant":
        value = float(initial.get("value", 1.0))
        return lambda x: np.full(np.shape(x), value)
    raise ValueError(f"unknown initial condition kind {kind!r}")


def sample_coefficient(spec: ExperimentSpec, index: int):
    return make_preset(spec.preset, sample_rng(spec.seed, index), **dict(spec.preset_params))


# -- error measurement ------------------------------------------------------------

def restrict_state(fine_state, fine_mesh: Mesh, coarse_mesh: Mesh) -> np.ndarray:
    """Exact cell-average restriction via the cumulative integral of the fine state."""
    cumulative = np.concatenate(([0.0], np.cumsum(np.asarray(fine_state) * fine_mesh.cell_sizes)))
    at_coarse = np.interp(coarse_mesh.interfaces, fine_mesh.interfaces, cumulative)
    return np.diff(at_coarse) / coarse_mesh.cell_sizes


def restrict_reference(u_ref: Solution, coarse_mesh: Mesh, t: float | None = None) -> np.ndarray:
    state = u_ref.final if t is None else u_ref.at(t)
    return restrict_state(state, u_ref.mesh, coarse_mesh)


def error_norm(diff, mesh: Mesh, norm: str) -> float:
    if norm == "L1":
        return float(np.sum(np.abs(diff) * mesh.cell_sizes))
    if norm == "L2":
        return float(np.sqrt(np.sum(np.square(diff) * mesh.cell_sizes)))
    raise ValueError(f"unknown norm {norm!r}")


def strong_error(u_ref: Solution, u: Solution, norm: str = "L1", t: float | None = None) -> float:
    """Pathwise error of ``u`` against the reference restricted onto ``u``'s mesh."""
    state = u.final if t is None else u.at(t)
    return error_norm(restrict_reference(u_ref, u.mesh, t) - state, u.mesh, norm)


def fit_rate(h, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(h)``; NaN if underdetermined."""
    h = np.asarray(h, dtype=float)
    e = np.asarray(errors, dtype=float)
    ok = (e > 0.0) & np.isfinite(e)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(h[ok]), np.log(e[ok]), 1)[0])


# -- report ---------------------------------------------------------------------------

ERROR_COLUMNS = ("sample", "strategy", "integrator", "level", "N_x", "min_h", "L1", "L2")


@dataclass
class ConvergenceReport:
    """Per-sample errors plus derived rates and summaries."""

    spec: ExperimentSpec
    records: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def _h(self, level: int) -> float:
        return (self.spec.domain[1] - self.spec.domain[0]) / level

    def groups(self):
        keys = sorted({(r["strategy"], r["integrator"]) for r in self.records},
                      key=lambda k: (STRATEGIES.index(k[0]), INTEGRATORS.index(k[1])))
        return keys

    def errors(self, strategy: str, norm: str = "L1", integrator: str | None = None) -> np.ndarray:
        """Array ``(n_samples, n_levels)`` of errors, NaN where missing."""
        integrator = integrator or self.spec.integrators[0]
        samples = sorted({r["sample"] for r in self.records})
        out = np.full((len(samples), len(self.spec.levels)), np.nan)
        row = {s: i for i, s in enumerate(samples)}
        col = {lv: j for j, lv in enumerate(self.spec.levels)}
        for r in self.records:
            if r["strategy"] == strategy and r["integrator"] == integrator:
                out[row[r["sample"]], col[r["level"]]] = r[norm]
        return out

    def sample_rates(self, strategy: str, norm: str = "L1", integrator: str | None = None) -> np.ndarray:
        h = [self._h(lv) for lv in self.spec.levels]
        return np.array([fit_rate(h, e) for e in self.errors(strategy, norm, integrator)])

    def median_rate(self, strategy: str, norm: str = "L1", integrator: str | None = None) -> float:
        return float(np.nanmedian(self.sample_rates(strategy, norm, integrator)))

    def mean_errors(self, strategy: str, norm: str = "L1", integrator: str | None = None) -> np.ndarray:
        return np.nanmean(self.errors(strategy, norm, integrator), axis=0)

    def mean_rate(self, strategy: str, norm: str = "L1", integrator: str | None = None) -> float:
        """Rate fitted to the sample-mean errors."""
        h = [self._h(lv) for lv in self.spec.levels]
        return fit_rate(h, self.mean_errors(strategy, norm, integrator))

    def write(self, out_dir) -> dict[str, Path]:
        """Write ``errors.csv``, ``rates.csv``, ``summary.csv`` and ``timings.csv``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {name: out / f"{name}.csv" for name in ("errors", "rates", "summary", "timings")}
        with open(paths["errors"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ERROR_COLUMNS)
            for r in self.records:
                w.writerow([_fmt(r[c]) for c in ERROR_COLUMNS])
        with open(paths["rates"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample", "strategy", "integrator", "norm", "rate"])
            samples = sorted({r["sample"] for r in self.records})
            for strategy, integrator in self.groups():
                for norm in self.spec.norms:
                    rates = self.sample_rates(strategy, norm, integrator)
                    for s, rate in zip(samples, rates):
                        w.writerow([s, strategy, integrator, norm, _fmt(rate)])
                    w.writerow(["mean_error_fit", strategy, integrator, norm,
                                _fmt(self.mean_rate(strategy, norm, integrator))])
        with open(paths["summary"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["strategy", "integrator", "norm", "level", "h", "n_samples", "mean_error",
                        "std_error"])
            for strategy, integrator in self.groups():
                for norm in self.spec.norms:
                    errs = self.errors(strategy, norm, integrator)
                    for j, lv in enumerate(self.spec.levels):
                        col = errs[:, j][np.isfinite(errs[:, j])]
                        n = col.size
                        mean = float(col.mean()) if n else math.nan
                        se = float(col.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
                        w.writerow([strategy, integrator, norm, lv, _fmt(self._h(lv)), n,
                                    _fmt(mean), _fmt(se)])
        with open(paths["timings"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample", "strategy", "integrator", "level", "N_x", "L1", "L2",
                        "wallclock_s"])
            for r in self.timings:
                w.writerow([_fmt(r[c]) for c in ("sample", "strategy", "integrator", "level",
                                                  "N_x", "L1", "L2", "wallclock_s")])
        return paths


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


# -- drivers ----------------------------------------------------------------------------

def _solve_sample(spec: ExperimentSpec, index: int):
    coefficient = sample_coefficient(spec, index)
    flux = burgers_flux(coefficient)
    u0 = make_initial(spec.initial)
    disc = coefficient.discontinuities
    reference_mesh = build_mesh(spec.reference_strategy, spec.reference_factor * spec.levels[-1],
                                disc, spec.domain)
    base = SolverConfig("forward_euler", spec.cfl_number, spec.t_end, track_mass=False)
    reference = solve(flux, reference_mesh, u0, base)
    records, timings = [], []
    for integrator in spec.integrators:
        config = replace(base, integrator=integrator,
                         dt=spec.implicit_dt if integrator == "backward_euler" else None)
        for strategy in spec.strategies:
            for level in spec.levels:
                mesh = build_mesh(strategy, level, disc, spec.domain)
                sol = solve(flux, mesh, u0, config)
                errs = {nrm: strong_error(reference, sol, nrm) for nrm in NORMS}
                rec = {"sample": index, "strategy": strategy, "integrator": integrator,
                       "level": level, "N_x": mesh.n_cells, "min_h": mesh.min_h, **errs}
                records.append(rec)
                timings.append({**rec, "wallclock_s": sol.wallclock})
    return records, timings


def _run_samples(spec: ExperimentSpec) -> ConvergenceReport:
    report = ConvergenceReport(spec)

    def task(i):
        try:
            return i, _solve_sample(spec, i), None
        except (SolverError, ValueError) as exc:
            return i, None, f"{type(exc).__name__}: {exc}"

    if spec.n_threads > 1:
        with ThreadPoolExecutor(spec.n_threads) as pool:
            results = list(pool.map(task, range(spec.samples)))
    else:
        results = [task(i) for i in range(spec.samples)]
    for i, payload, err in sorted(results, key=lambda r: r[0]):
        if err is not None:
            report.failures.append({"sample": i, "error": err})
            continue
        records, timings = payload
        report.records.extend(records)
        report.timings.extend(timings)
    if report.failures:
        logger.warning("%s: %d of %d samples failed and were excluded", spec.name,
                       len(report.failures), spec.samples)
    return report


def run_convergence(spec: ExperimentSpec) -> ConvergenceReport:
    """Strong errors of every strategy and level against the per-sample reference."""
    return _run_samples(spec)


def run_time_to_error(spec: ExperimentSpec) -> ConvergenceReport:
    """Wall-clock and error of explicit and implicit integration per level."""
    integrators = spec.integrators if len(spec.integrators) > 1 else INTEGRATORS
    return _run_samples(replace(spec, integrators=tuple(integrators)))


def sweep_specs(axis: str, base: ExperimentSpec, values=None) -> list[ExperimentSpec]:
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {tuple(SWEEP_AXES)}")
    preset, param, default_values = SWEEP_AXES[axis]
    if axis == "jump_distance" and base.preset in ("up_jump", "down_jump"):
        preset = base.preset
    values = default_values if values is None else values
    specs = []
    for v in values:
        params = {**base.preset_params, param: v}
        specs.append(replace(base, name=f"{base.name}_{param}-{v}", preset=preset,
                             preset_params=params))
    return specs


def run_parameter_sweep(axis: str, base: ExperimentSpec, values=None,
                        mode: str = "convergence") -> list[ConvergenceReport]:
    """One report per value of the swept parameter.

    ``mode="time_to_error"`` runs both integrators for every value.
    """
    runner = {"convergence": run_convergence, "time_to_error": run_time_to_error}
    if mode not in runner:
        raise ValueError(f"mode must be one of {tuple(runner)}")
    return [runner[mode](spec) for spec in sweep_specs(axis, base, values)]
