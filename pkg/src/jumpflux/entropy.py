"""Steady states ``F(x, m(x)) = alpha`` and a discrete adapted entropy functional.

The functional pairs a recorded solution with a steady state and a smooth
nonnegative test function; nonnegative values for all steady states and test
functions characterise admissible solutions, so its negative part serves as
a solution-quality diagnostic.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from jumpflux.solver import FluxModel, Solution

BRANCHES = ("plus", "minus")


@dataclass(frozen=True, eq=False)
class SteadyState:
    """Branch ``plus`` (``m >= root``) or ``minus`` (``m <= root``) of ``F(x, m) = alpha``."""

    alpha: float
    branch: str
    flux: FluxModel

    def __post_init__(self):
        if self.branch not in BRANCHES:
            raise ValueError(f"branch must be one of {BRANCHES}")
        if self.alpha < 0.0:
            raise ValueError("alpha must be >= 0 for convex fluxes vanishing at the root")

    def __call__(self, x) -> np.ndarray:
        return steady_state_eval(self, x)


def _bisect_branch(flux: FluxModel, x: np.ndarray, alpha: float, sign: float) -> np.ndarray:
    root = flux.root
    step = np.ones_like(x)
    far = root + sign * step
    # grow the bracket until F(x, far) >= alpha
    for _ in range(200):
        short = flux(x, far) < alpha
        if not np.any(short):
            break
        step = np.where(short, 2.0 * step, step)
        far = root + sign * step
    lo = np.full_like(x, root)
    hi = far.copy()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        below = flux(x, mid) < alpha
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(np.abs(hi - lo) <= 1e-12 * np.maximum(1.0, np.abs(hi))):
            break
    return 0.5 * (lo + hi)


def steady_state_eval(s: SteadyState, x) -> np.ndarray:
    """Steady state at ``x``; closed form for Burgers, bisection otherwise."""
    x = np.asarray(x, dtype=float)
    sign = 1.0 if s.branch == "plus" else -1.0
    if s.alpha == 0.0:
        return np.full(x.shape, s.flux.root)
    if s.flux.is_burgers:
        return sign * np.sqrt(2.0 * s.alpha / s.flux.coefficient(x))
    return _bisect_branch(s.flux, x, s.alpha, sign)


def bump(s):
    """``exp(-1/(1-s^2))`` on ``|s| < 1``, zero outside."""
    s = np.asarray(s, dtype=float)
    out = np.zeros(s.shape)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


def bump_derivative(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros(s.shape)
    inside = np.abs(s) < 1.0
    si = s[inside]
    out[inside] = np.exp(-1.0 / (1.0 - si**2)) * (-2.0 * si / (1.0 - si**2) ** 2)
    return out


@dataclass(frozen=True)
class BumpTestFunction:
    """``phi(x, t) = scale * bump((x - x0)/rx) * bump((t - t0)/rt)``."""

    x0: float
    t0: float
    rx: float
    rt: float
    scale: float = 1.0
    name: str = "bump"

    def __call__(self, x, t):
        return self.scale * bump((x - self.x0) / self.rx) * bump((t - self.t0) / self.rt)

    def dx(self, x, t):
        return self.scale * bump_derivative((x - self.x0) / self.rx) / self.rx * bump(
            (t - self.t0) / self.rt)

    def dt(self, x, t):
        return self.scale * bump((x - self.x0) / self.rx) * bump_derivative(
            (t - self.t0) / self.rt) / self.rt

    def check_support(self, domain, t_end):
        left, right = domain
        if self.x0 - self.rx < left or self.x0 + self.rx > right or self.t0 + self.rt > t_end:
            raise ValueError(f"test function {self.name} is not supported inside the domain")


def entropy_functional_discrete(u: Solution, s: SteadyState, phi: BumpTestFunction) -> float:
    """Midpoint quadrature of the adapted entropy functional over the recorded solution.

    Space-time cells are ``mesh cell x [t_k, t_{k+1}]`` for consecutive
    recorded times; the state at the time midpoint is the average of the two
    recorded states.  The initial term uses the first recorded state.
    """
    mesh = u.mesh
    phi.check_support(mesh.domain, float(u.times[-1]))
    if u.times[0] != 0.0:
        raise ValueError("solution must be recorded at t = 0")
    x = mesh.centers
    dx = mesh.cell_sizes
    m = steady_state_eval(s, x)
    flux = s.flux
    total = 0.0
    for k in range(u.times.size - 1):
        t0, t1 = u.times[k], u.times[k + 1]
        tm = 0.5 * (t0 + t1)
        um = 0.5 * (u.states[k] + u.states[k + 1])
        diff = um - m
        term_t = np.abs(diff) * phi.dt(x, tm)
        term_x = np.sign(diff) * (flux(x, um) - s.alpha) * phi.dx(x, tm)
        total += (t1 - t0) * float(np.sum((term_t + term_x) * dx))
    total += float(np.sum(np.abs(u.states[0] - m) * phi(x, 0.0) * dx))
    return total


def alpha_grid(a_plus: float, u_max: float, n: int = 16, alpha_min: float = 1e-3) -> np.ndarray:
    """Log-spaced ``alpha`` values up to the largest flux value ``a_plus * u_max^2 / 2``."""
    top = max(a_plus * u_max**2 / 2.0, alpha_min * 1.0001)
    return np.geomspace(alpha_min, top, n)


def entropy_report(u: Solution, flux: FluxModel, alphas, test_functions) -> list[dict]:
    """``J`` for every (alpha, branch, test function); one dict per row."""
    rows = []
    for alpha in alphas:
        for branch in BRANCHES:
            steady = SteadyState(float(alpha), branch, flux)
            for phi in test_functions:
                rows.append({
                    "alpha": float(alpha),
                    "branch": branch,
                    "test_fn": phi.name,
                    "J": entropy_functional_discrete(u, steady, phi),
                    "n_cells": u.mesh.n_cells,
                })
    return rows


def write_entropy_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["alpha", "branch", "test_fn", "J", "N_x"])
        for r in rows:
            writer.writerow([repr(r["alpha"]), r["branch"], r["test_fn"], repr(r["J"]), r["n_cells"]])


def lipschitz_in_alpha(a_minus: float, alpha: float, beta: float) -> float:
    """Bound on ``|m_alpha - m_beta|`` for Burgers when both are >= ``min(alpha, beta)``.

    ``sqrt(2 t / a)`` has derivative ``1 / sqrt(2 a t)``, so on ``[lo, hi]``
    the Lipschitz constant is ``1 / sqrt(2 a_minus lo)``.
    """
    lo = min(alpha, beta)
    if lo <= 0.0:
        return math.inf
    return 1.0 / math.sqrt(2.0 * a_minus * lo)
