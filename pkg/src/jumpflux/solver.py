"""Conservative Godunov finite volume scheme with spatially dependent flux.

Solves ``u_t + F(x, u)_x = 0`` on a periodic 1D domain.  For the
multiplicative flux ``F(x, u) = a(x) f(u)`` with convex ``f`` the interface
flux uses the closed form with the coefficient taken from the cells on each
side of the interface; general fluxes fall back to a numerical min/max over
the interval spanned by the two cell states.

The explicit Burgers path (``f(u) = u^2/2``) runs in a compiled loop, all
other paths are plain numpy.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numba
import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from jumpflux.mesh import Mesh

logger = logging.getLogger(__name__)

INTEGRATORS = ("forward_euler", "backward_euler")
GOLDEN_ITERATIONS = 60
MAX_DT_HALVINGS = 10
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class SolverError(RuntimeError):
    """A solve could not be completed (non-finite state or Newton failure)."""

    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time


class NewtonFailure(SolverError):
    pass


# -- flux models -------------------------------------------------------------

def _burgers_f(u):
    return 0.5 * np.square(u)


def _burgers_df(u):
    return np.asarray(u, dtype=float)


@dataclass(frozen=True, eq=False)
class FluxModel:
    """Flux ``F(x, u)``.

    ``kind="multiplicative"``: ``F = coefficient(x) * f(u)`` with convex ``f``
    vanishing at ``root``.  ``kind="general"``: ``F = flux(x, u)`` with
    derivative ``dflux(x, u)``.
    """

    kind: str
    coefficient: Callable | None = None
    f: Callable | None = None
    df: Callable | None = None
    root: float = 0.0
    flux: Callable | None = None
    dflux: Callable | None = None
    is_burgers: bool = False

    def __post_init__(self):
        if self.kind == "multiplicative":
            if self.coefficient is None or self.f is None or self.df is None:
                raise ValueError("multiplicative flux needs coefficient, f and df")
        elif self.kind == "general":
            if self.flux is None or self.dflux is None:
                raise ValueError("general flux needs flux and dflux")
        else:
            raise ValueError(f"unknown flux kind {self.kind!r}")

    @classmethod
    def multiplicative(cls, coefficient, f, df, root=0.0) -> "FluxModel":
        return cls("multiplicative", coefficient, f, df, float(root))

    @classmethod
    def general(cls, flux, dflux, root=0.0) -> "FluxModel":
        return cls("general", flux=flux, dflux=dflux, root=float(root))

    def __call__(self, x, u) -> np.ndarray:
        if self.kind == "multiplicative":
            return self.coefficient(x) * self.f(u)
        return self.flux(x, u)

    def derivative(self, x, u) -> np.ndarray:
        if self.kind == "multiplicative":
            return self.coefficient(x) * self.df(u)
        return self.dflux(x, u)

    def coefficient_bound(self, a_cells=None) -> float:
        bounds = getattr(self.coefficient, "bounds", None)
        if bounds is not None:
            return float(bounds[1])
        if a_cells is None:
            raise ValueError("coefficient without cached bounds needs cell values")
        return float(np.max(a_cells))


def burgers_flux(coefficient) -> FluxModel:
    """``F(x, u) = a(x) u^2 / 2``."""
    return FluxModel("multiplicative", coefficient, _burgers_f, _burgers_df, 0.0, is_burgers=True)


@dataclass
class SolverConfig:
    integrator: str = "forward_euler"
    cfl_number: float = 0.9
    t_end: float = 1.0
    bc: str = "periodic"
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    dt: float | None = None
    track_mass: bool = True

    def __post_init__(self):
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}, got {self.integrator!r}")
        if not 0.0 < self.cfl_number < 1.0:
            raise ValueError("cfl_number must lie in (0, 1)")
        if self.t_end <= 0.0:
            raise ValueError("t_end must be positive")
        if self.bc != "periodic":
            raise ValueError("only periodic boundary conditions are supported")
        if self.newton_tol <= 0.0 or self.newton_max_iter < 1:
            raise ValueError("newton_tol and newton_max_iter must be positive")
        if self.dt is not None and self.dt <= 0.0:
            raise ValueError("dt must be positive")


@dataclass(frozen=True, eq=False)
class Solution:
    """Cell averages at the recorded times plus run diagnostics."""

    mesh: Mesh
    times: np.ndarray
    states: np.ndarray
    mass_times: np.ndarray
    mass_trace: np.ndarray
    max_mass_drift: float
    flux_bound: float
    n_steps: int
    integrator: str
    wallclock: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def at(self, t: float) -> np.ndarray:
        idx = np.flatnonzero(np.isclose(self.times, t, rtol=0.0, atol=1e-12))
        if idx.size == 0:
            raise KeyError(f"time {t} was not recorded (recorded: {self.times})")
        return self.states[idx[0]]

    def snapshots_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "x_center", "u"])
            for t, state in zip(self.times, self.states):
                for x, u in zip(self.mesh.centers, state):
                    writer.writerow([repr(float(t)), repr(float(x)), repr(float(u))])

    def mass_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "t", "mass"])
            for i, (t, m) in enumerate(zip(self.mass_times, self.mass_trace)):
                writer.writerow([i, repr(float(t)), repr(float(m))])


# -- initial data ------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)


def init_cell_averages(u0: Callable, mesh: Mesh) -> np.ndarray:
    """Cell averages of ``u0`` by 5-point Gauss-Legendre quadrature per cell."""
    half = 0.5 * mesh.cell_sizes
    pts = mesh.centers[:, None] + half[:, None] * _GL_NODES[None, :]
    vals = np.asarray(u0(pts), dtype=float)
    if vals.shape != pts.shape:
        vals = np.broadcast_to(vals, pts.shape)
    return 0.5 * vals @ _GL_WEIGHTS


# -- numerical fluxes ----------------------------------------------------------

def godunov_flux_multiplicative_convex(a_left, a_right, f, u_left, u_right, root=0.0):
    """Closed-form Godunov flux for ``a(x) f(u)`` with convex ``f``, ``f(root) = 0``."""
    u_left = np.asarray(u_left, dtype=float)
    u_right = np.asarray(u_right, dtype=float)
    return np.maximum(
        a_left * f(np.maximum(u_left, root)),
        a_right * f(np.minimum(u_right, root)),
    )


def _golden_extremum(g, lo, hi, sign):
    """Vectorised golden-section search; returns ``g`` at the minimiser of ``sign * g``."""
    a, b = lo.copy(), hi.copy()
    best = sign * g(0.5 * (a + b))
    for _ in range(GOLDEN_ITERATIONS):
        c = b - _INVPHI * (b - a)
        d = a + _INVPHI * (b - a)
        gc, gd = sign * g(c), sign * g(d)
        best = np.minimum(best, np.minimum(gc, gd))
        left = gc < gd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
    return sign * best


def godunov_flux_general(flux: FluxModel, x_interface, u_left, u_right):
    """Godunov flux ``min/max of F(x, .)`` over the interval between the states.

    Minimum when ``u_left <= u_right``, maximum otherwise.  Multiplicative
    convex fluxes are evaluated at the end points and the clamped root; other
    fluxes use golden-section search refined by the end point values.
    """
    ul, ur = np.broadcast_arrays(np.asarray(u_left, dtype=float), np.asarray(u_right, dtype=float))
    x = np.broadcast_to(np.asarray(x_interface, dtype=float), ul.shape)
    lo, hi = np.minimum(ul, ur), np.maximum(ul, ur)
    rising = ul <= ur
    f_lo, f_hi = flux(x, lo), flux(x, hi)
    if flux.kind == "multiplicative":
        f_root = flux(x, np.clip(flux.root, lo, hi))
        out = np.where(rising, np.minimum(np.minimum(f_lo, f_hi), f_root), np.maximum(f_lo, f_hi))
    else:
        out = np.empty(ul.shape)
        for sign, mask in ((1.0, rising), (-1.0, ~rising)):
            if not np.any(mask):
                continue
            xm = x[mask]
            inner = _golden_extremum(lambda t: flux(xm, t), lo[mask], hi[mask], sign)
            ends = sign * np.minimum(sign * f_lo[mask], sign * f_hi[mask])
            out[mask] = sign * np.minimum(sign * inner, sign * ends)
    if not np.all(np.isfinite(out)):
        raise SolverError("non-finite Godunov flux")
    return out if out.ndim else float(out)


def cell_coefficient(flux: FluxModel, mesh: Mesh) -> np.ndarray | None:
    """Coefficient at the cell centres (multiplicative fluxes only)."""
    if flux.kind != "multiplicative":
        return None
    return np.asarray(flux.coefficient(mesh.centers), dtype=float)


def interface_fluxes(flux: FluxModel, mesh: Mesh, state, a_cells=None) -> np.ndarray:
    """Godunov fluxes at all ``n_cells + 1`` interfaces with periodic closure."""
    u = np.asarray(state, dtype=float)
    ul = np.roll(u, 1)  # ul[k] is the state left of interface k
    if flux.kind == "multiplicative":
        a = cell_coefficient(flux, mesh) if a_cells is None else a_cells
        inner = godunov_flux_multiplicative_convex(np.roll(a, 1), a, flux.f, ul, u, flux.root)
    else:
        inner = godunov_flux_general(flux, mesh.interfaces[:-1], ul, u)
    return np.append(inner, inner[0])


def cfl_dt(flux: FluxModel, mesh: Mesh, state, cfl_number: float, remaining: float = math.inf,
           a_cells=None) -> float:
    """Largest stable explicit step, capped by the ``remaining`` time."""
    u = np.asarray(state, dtype=float)
    if flux.kind == "multiplicative":
        speed = flux.coefficient_bound(a_cells) * float(np.max(np.abs(flux.df(u))))
    else:
        speed = float(np.max(np.abs(flux.dflux(mesh.interfaces[:-1], u))))
    if speed == 0.0:
        return remaining
    return min(cfl_number * mesh.min_h / speed, remaining)


def forward_euler_step(flux: FluxModel, mesh: Mesh, state, dt: float, a_cells=None) -> np.ndarray:
    u = np.asarray(state, dtype=float)
    F = interface_fluxes(flux, mesh, u, a_cells)
    return u - dt / mesh.cell_sizes * np.diff(F)


def _color_groups(n: int) -> list[np.ndarray]:
    """Column groups with disjoint periodic 3-point stencils."""
    if n <= 3:
        return [np.array([i]) for i in range(n)]
    r = n % 3
    body = np.arange(n - r)
    groups = [body[body % 3 == c] for c in range(3)]
    groups.extend(np.array([i]) for i in range(n - r, n))
    return groups


def _fd_jacobian(residual, v, r0):
    n = v.size
    rows, cols, vals = [], [], []
    for group in _color_groups(n):
        eps = 1e-7 * np.maximum(1.0, np.abs(v[group]))
        vp = v.copy()
        vp[group] += eps
        dr = residual(vp) - r0
        for j, e in zip(group, eps):
            for i in ((j - 1) % n, j, (j + 1) % n):
                rows.append(i)
                cols.append(j)
                vals.append(dr[i] / e)
    jac = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsc()
    jac.sum_duplicates()
    return jac


def backward_euler_step(flux: FluxModel, mesh: Mesh, state, dt: float, newton_tol: float = 1e-10,
                        newton_max_iter: int = 50, a_cells=None) -> tuple[np.ndarray, int]:
    """One implicit Euler step by damped Newton; returns ``(state, iterations)``.

    Raises NewtonFailure when the residual does not drop below ``newton_tol``
    (max norm) within ``newton_max_iter`` iterations.
    """
    u_old = np.asarray(state, dtype=float)
    if a_cells is None:
        a_cells = cell_coefficient(flux, mesh)
    ratio = dt / mesh.cell_sizes

    def residual(v):
        return v - u_old + ratio * np.diff(interface_fluxes(flux, mesh, v, a_cells))

    v = u_old.copy()
    r = residual(v)
    norm = float(np.max(np.abs(r)))
    for it in range(newton_max_iter + 1):
        if norm <= newton_tol:
            return v, it
        if it == newton_max_iter:
            break
        jac = _fd_jacobian(residual, v, r)
        step = spsolve(jac, -r)
        if not np.all(np.isfinite(step)):
            break
        lam = 1.0
        base = float(np.linalg.norm(r))
        for _ in range(30):
            trial = v + lam * step
            r_trial = residual(trial)
            if np.linalg.norm(r_trial) <= (1.0 - 1e-4 * lam) * base:
                break
            lam *= 0.5
        v, r = trial, r_trial
        norm = float(np.max(np.abs(r)))
    raise NewtonFailure(f"Newton did not converge (residual {norm:.3e})")


# -- compiled explicit Burgers loop ---------------------------------------------

@numba.njit(cache=True, nogil=True)
def _burgers_explicit_loop(u, dx, a, a_plus, out_times, cfl, min_dx, track_mass):
    n = u.size
    n_out = out_times.size
    states = np.empty((n_out, n))
    flux = np.empty(n + 1)
    cap = 1024 if track_mass else 1
    mass_t = np.empty(cap)
    mass_v = np.empty(cap)
    n_mass = 0
    mass0 = 0.0
    for i in range(n):
        mass0 += u[i] * dx[i]
    if track_mass:
        mass_t[0] = 0.0
        mass_v[0] = mass0
        n_mass = 1
    max_drift = 0.0
    bound = 0.0
    for i in range(n):
        g = a[i] * 0.5 * u[i] * u[i]
        if g > bound:
            bound = g
    umax = 0.0
    for i in range(n):
        if abs(u[i]) > umax:
            umax = abs(u[i])
    t = 0.0
    step = 0
    k = 0
    while k < n_out and out_times[k] <= 0.0:
        states[k] = u
        k += 1
    while k < n_out:
        target = out_times[k]
        remaining = target - t
        speed = a_plus * umax
        land = True
        dt = remaining
        if speed > 0.0:
            dt_cfl = cfl * min_dx / speed
            if dt_cfl < remaining:
                dt = dt_cfl
                land = False
        # interface j sits between cells j-1 and j; interface 0 wraps around
        for j in range(n + 1):
            il = j - 1 if j > 0 else n - 1
            ir = j if j < n else 0
            ul = u[il]
            ur = u[ir]
            if ul < 0.0:
                ul = 0.0
            if ur > 0.0:
                ur = 0.0
            fl = a[il] * 0.5 * ul * ul
            fr = a[ir] * 0.5 * ur * ur
            flux[j] = fl if fl > fr else fr
        mass = 0.0
        umax = 0.0
        for i in range(n):
            v = u[i] - dt / dx[i] * (flux[i + 1] - flux[i])
            u[i] = v
            mass += v * dx[i]
            av = abs(v)
            if av > umax:
                umax = av
            g = a[i] * 0.5 * v * v
            if g > bound:
                bound = g
        step += 1
        t = target if land else t + dt
        if not np.isfinite(mass) or not np.isfinite(umax):
            return states, mass_t[:n_mass], mass_v[:n_mass], max_drift, bound, step, t, False
        drift = abs(mass - mass0)
        if drift > max_drift:
            max_drift = drift
        if track_mass:
            if n_mass == mass_t.size:
                grown_t = np.empty(2 * n_mass)
                grown_v = np.empty(2 * n_mass)
                grown_t[:n_mass] = mass_t
                grown_v[:n_mass] = mass_v
                mass_t = grown_t
                mass_v = grown_v
            mass_t[n_mass] = t
            mass_v[n_mass] = mass
            n_mass += 1
        while k < n_out and out_times[k] <= t:
            states[k] = u
            k += 1
    return states, mass_t[:n_mass], mass_v[:n_mass], max_drift, bound, step, t, True


# -- driver ------------------------------------------------------------------------

def _resolve_output_times(t_end: float, output_times) -> np.ndarray:
    if output_times is None:
        times = np.array([0.0, t_end])
    else:
        times = np.unique(np.append(np.asarray(output_times, dtype=float), t_end))
    if times[0] < 0.0 or times[-1] > t_end:
        raise ValueError("output times must lie in [0, t_end]")
    return times


def solve(flux: FluxModel, mesh: Mesh, u0, config: SolverConfig | None = None,
          output_times=None) -> Solution:
    """March from 0 to ``config.t_end`` and record the state at ``output_times``.

    ``u0`` is either a callable (cell averages are computed by quadrature)
    or an array of cell averages.  Steps are clamped to land exactly on the
    output times.
    """
    config = config or SolverConfig()
    u = init_cell_averages(u0, mesh) if callable(u0) else np.array(u0, dtype=float)
    if u.shape != (mesh.n_cells,):
        raise ValueError(f"initial state has shape {u.shape}, mesh has {mesh.n_cells} cells")
    if not np.all(np.isfinite(u)):
        raise SolverError("non-finite initial state at step 0 (t=0)", step=0, time=0.0)
    times = _resolve_output_times(config.t_end, output_times)
    a_cells = cell_coefficient(flux, mesh)
    start = time.perf_counter()
    if config.integrator == "forward_euler" and flux.is_burgers:
        sol = _solve_burgers_explicit(flux, mesh, u, times, config, a_cells)
    else:
        sol = _solve_generic(flux, mesh, u, times, config, a_cells)
    return replace(sol, wallclock=time.perf_counter() - start)


def _solve_burgers_explicit(flux, mesh, u, times, config, a_cells) -> Solution:
    a_plus = flux.coefficient_bound(a_cells)
    states, mt, mv, drift, bound, steps, t, ok = _burgers_explicit_loop(
        u.copy(), np.ascontiguousarray(mesh.cell_sizes), np.ascontiguousarray(a_cells),
        float(a_plus), times, float(config.cfl_number), mesh.min_h, bool(config.track_mass),
    )
    if not ok:
        raise SolverError(f"non-finite state at step {steps} (t={t:.6g})", step=steps, time=t)
    return Solution(mesh, times, states, mt, mv, float(drift), float(bound), int(steps),
                    config.integrator)


def _solve_generic(flux, mesh, u, times, config, a_cells) -> Solution:
    states = np.empty((times.size, mesh.n_cells))
    mass0 = float(u @ mesh.cell_sizes)
    mass_t, mass_v = [0.0], [mass0]
    drift = 0.0
    bound = float(np.max(np.abs(flux(mesh.centers, u))))
    t, step, k = 0.0, 0, 0
    newton_total = 0
    implicit_dt = config.dt if config.dt is not None else (mesh.domain[1] - mesh.domain[0]) / mesh.n_cells
    while k < times.size and times[k] <= 0.0:
        states[k] = u
        k += 1
    while k < times.size:
        remaining = times[k] - t
        if config.integrator == "forward_euler":
            dt = config.dt if config.dt is not None else cfl_dt(
                flux, mesh, u, config.cfl_number, remaining, a_cells)
            dt = min(dt, remaining)
            u_new = forward_euler_step(flux, mesh, u, dt, a_cells)
        else:
            dt = min(implicit_dt, remaining)
            for attempt in range(MAX_DT_HALVINGS + 1):
                try:
                    u_new, its = backward_euler_step(flux, mesh, u, dt, config.newton_tol,
                                                     config.newton_max_iter, a_cells)
                    newton_total += its
                    break
                except NewtonFailure as exc:
                    if attempt == MAX_DT_HALVINGS:
                        raise NewtonFailure(f"{exc} at step {step} after {attempt} halvings",
                                            step=step, time=t) from exc
                    logger.debug("Newton failed at t=%g, halving dt=%g", t, dt)
                    dt *= 0.5
        step += 1
        t = times[k] if dt >= remaining else t + dt
        if not np.all(np.isfinite(u_new)):
            raise SolverError(f"non-finite state at step {step} (t={t:.6g})", step=step, time=t)
        u = u_new
        mass = float(u @ mesh.cell_sizes)
        drift = max(drift, abs(mass - mass0))
        bound = max(bound, float(np.max(np.abs(flux(mesh.centers, u)))))
        if config.track_mass:
            mass_t.append(t)
            mass_v.append(mass)
        while k < times.size and times[k] <= t:
            states[k] = u
            k += 1
    return Solution(mesh, times, states, np.asarray(mass_t), np.asarray(mass_v), drift, bound,
                    step, config.integrator, extra={"newton_iterations": newton_total})


class GodunovSolver(BaseEstimator):
    """Estimator wrapper around :func:`solve`.

    ``fit(mesh, coefficient)`` binds the discretised Burgers problem (or a
    custom ``flux``); ``predict(u0)`` returns the cell averages at ``t_end``
    and ``solve(u0)`` the full :class:`Solution`.
    """

    def __init__(self, integrator="forward_euler", cfl_number=0.9, t_end=1.0, dt=None,
                 newton_tol=1e-10, newton_max_iter=50, track_mass=True):
        self.integrator = integrator
        self.cfl_number = cfl_number
        self.t_end = t_end
        self.dt = dt
        self.newton_tol = newton_tol
        self.newton_max_iter = newton_max_iter
        self.track_mass = track_mass

    def _config(self) -> SolverConfig:
        return SolverConfig(self.integrator, self.cfl_number, self.t_end, "periodic",
                            self.newton_tol, self.newton_max_iter, self.dt, self.track_mass)

    def fit(self, mesh: Mesh, coefficient=None, flux: FluxModel | None = None):
        if (coefficient is None) == (flux is None):
            raise ValueError("pass exactly one of coefficient or flux")
        self._config()
        self.mesh_ = mesh
        self.flux_ = flux if flux is not None else burgers_flux(coefficient)
        return self

    def solve(self, u0, output_times=None) -> Solution:
        check_is_fitted(self, "flux_")
        return solve(self.flux_, self.mesh_, u0, self._config(), output_times)

    def predict(self, u0) -> np.ndarray:
        return self.solve(u0).final
