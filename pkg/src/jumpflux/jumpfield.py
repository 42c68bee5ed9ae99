"""Piecewise-constant jump fields and the composite random coefficient.

A coefficient realization is ``a(x) = mean(x) + transform(W(x)) + P(x)`` with
an optional Gaussian part ``W`` and an optional jump field ``P``.  Partition
cells are indexed as in the usual definition: cell 0 is the exterior left of
the domain, cells ``1..m+1`` are the interior cells between the ``m``
breakpoints, cell ``m+2`` is the exterior right of the domain.  At a
breakpoint the value of the cell to the right is returned.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from jumpflux._validation import check_domain, check_rng
from jumpflux.randfield import CovarianceSpec, KLBasis, KLRealization, kl_sample, nystrom_eigenpairs

#: breakpoints closer than this are merged
MIN_GAP = 1e-12
#: size of the uniform grid used to bracket the coefficient range
BOUNDS_GRID = 10_000

PRESETS = (
    "alternating_exponential",
    "poisson_sqexp",
    "inclusions",
    "up_jump",
    "down_jump",
    "alternating_fixed",
    "two_level",
    "lognormal",
    "constant",
)


@dataclass(frozen=True, eq=False)
class Partition:
    """Sorted interior jump locations of a random partition of the domain."""

    breakpoints: np.ndarray
    domain: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        domain = check_domain(self.domain)
        pts = np.sort(np.asarray(self.breakpoints, dtype=float).ravel())
        if pts.size and (pts[0] <= domain[0] or pts[-1] >= domain[1]):
            raise ValueError("breakpoints must lie in the open interior of the domain")
        if pts.size > 1:
            pts = pts[np.concatenate(([True], np.diff(pts) > MIN_GAP))]
        object.__setattr__(self, "breakpoints", pts)
        object.__setattr__(self, "domain", domain)

    @property
    def count(self) -> int:
        """Number of breakpoints (interior cells minus one)."""
        return self.breakpoints.size

    def cell_index(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.breakpoints, x, side="right") + 1
        idx = np.where(x < self.domain[0], 0, idx)
        return np.where(x > self.domain[1], self.count + 2, idx)


@dataclass(frozen=True, eq=False)
class JumpField:
    """Positive heights on the cells of a partition (exterior cells included)."""

    partition: Partition
    heights: np.ndarray

    def __post_init__(self):
        heights = np.asarray(self.heights, dtype=float)
        if heights.shape != (self.partition.count + 3,):
            raise ValueError(
                f"need {self.partition.count + 3} heights for {self.partition.count} breakpoints, "
                f"got {heights.shape}"
            )
        if not np.all(np.isfinite(heights)) or np.any(heights <= 0.0):
            raise ValueError("jump heights must be finite and positive")
        object.__setattr__(self, "heights", heights)

    @classmethod
    def from_interior(cls, breakpoints, interior_heights, domain=(0.0, 1.0)) -> "JumpField":
        """Build from interior heights; exterior cells copy their neighbours."""
        part = Partition(breakpoints, domain)
        inner = np.asarray(interior_heights, dtype=float)
        return cls(part, np.concatenate(([inner[0]], inner, [inner[-1]])))

    def __call__(self, x) -> np.ndarray:
        return self.heights[self.partition.cell_index(x)]


def _zero(x):
    return np.zeros_like(np.asarray(x, dtype=float))


@dataclass(frozen=True, eq=False)
class SampledCoefficient:
    """One realization ``a(x) = mean(x) + transform(W(x)) + P(x)``."""

    mean: Callable = _zero
    transform: Callable = np.exp
    gauss: KLRealization | None = None
    jumps: JumpField | None = None
    domain: tuple[float, float] = (0.0, 1.0)
    name: str = "custom"
    discontinuities: np.ndarray = field(init=False)
    bounds: tuple[float, float] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "domain", check_domain(self.domain))
        if self.gauss is None and self.jumps is None:
            raise ValueError("a coefficient needs a Gaussian part, a jump field, or both")
        disc = self.jumps.partition.breakpoints.copy() if self.jumps is not None else np.empty(0)
        object.__setattr__(self, "discontinuities", disc)
        left, right = self.domain
        probe = [np.linspace(left, right, BOUNDS_GRID), disc - MIN_GAP, disc + MIN_GAP]
        values = self(np.concatenate(probe))
        lo, hi = float(values.min()), float(values.max())
        if not (np.isfinite(lo) and np.isfinite(hi)) or lo <= 0.0:
            raise ValueError(f"invalid coefficient realization: range [{lo}, {hi}]")
        object.__setattr__(self, "bounds", (lo, hi))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        value = np.asarray(self.mean(x), dtype=float)
        if self.gauss is not None:
            value = value + self.transform(self.gauss(x))
        if self.jumps is not None:
            value = value + self.jumps(x)
        return value

    @property
    def has_gauss(self) -> bool:
        return self.gauss is not None

    def to_csv(self, path, grid) -> None:
        grid = np.asarray(grid, dtype=float)
        values = self(grid)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["x", "a"])
            for x, a in zip(grid, values):
                writer.writerow([repr(float(x)), repr(float(a))])


def eval_coefficient(c: SampledCoefficient, x) -> np.ndarray:
    """Evaluate a coefficient realization; raises on non-finite values."""
    values = c(x)
    if not np.all(np.isfinite(values)):
        raise ValueError("coefficient evaluated to a non-finite value")
    return values


def sample_partition(lam: float, random_state=None, domain=(0.0, 1.0),
                     n_breaks: int | None = None) -> Partition:
    """``Poi(lam) + 1`` uniform breakpoints, sorted.  ``n_breaks`` forces the count."""
    if lam <= 0:
        raise ValueError("Poisson rate must be positive")
    rng = check_rng(random_state)
    left, right = check_domain(domain)
    count = int(rng.poisson(lam)) + 1 if n_breaks is None else int(n_breaks)
    pts = rng.uniform(left, right, size=count)
    # uniform() can return the left end point, which is not an interior point
    while np.any(pts <= left):
        bad = pts <= left
        pts[bad] = rng.uniform(left, right, size=int(bad.sum()))
    return Partition(pts, (left, right))


# -- presets ---------------------------------------------------------------

_BASIS_CACHE: dict[tuple, KLBasis] = {}


def gaussian_basis(spec: CovarianceSpec, n_quad: int = 512, n_terms: int | None = None) -> KLBasis:
    """Nyström basis, memoised per (spec, n_quad, n_terms)."""
    key = (spec, int(n_quad), n_terms)
    if key not in _BASIS_CACHE:
        _BASIS_CACHE[key] = nystrom_eigenpairs(spec, n_quad, n_terms)
    return _BASIS_CACHE[key]


def _positive_poisson(rng: np.random.Generator, lam: float) -> int:
    # Poi(lam) == 0 would give a zero or infinite height; redraw
    while True:
        k = int(rng.poisson(lam))
        if k > 0:
            return k


def alternating_heights(n_cells: int, rng: np.random.Generator) -> np.ndarray:
    """Heights for cells ``0..n_cells-1``: U[1/4,3/4] on odd, U[5/4,7/4] on even."""
    idx = np.arange(n_cells)
    low = rng.uniform(0.25, 0.75, size=n_cells)
    high = rng.uniform(1.25, 1.75, size=n_cells)
    return np.where(idx % 2 == 1, low, high)


def preset_alternating_exponential(random_state=None, gauss_spec: CovarianceSpec | None = None,
                                   n_quad: int = 512, n_terms: int | None = None,
                                   rate: float = 5.0) -> SampledCoefficient:
    rng = check_rng(random_state)
    spec = gauss_spec or CovarianceSpec(nu=0.5, variance=0.5, correlation_length=0.1)
    part = sample_partition(rate, rng, spec.domain)
    jumps = JumpField(part, alternating_heights(part.count + 3, rng))
    gauss = kl_sample(gaussian_basis(spec, n_quad, n_terms), rng)
    return SampledCoefficient(_zero, np.exp, gauss, jumps, spec.domain, "alternating_exponential")


def preset_poisson_squaredexp(random_state=None, gauss_spec: CovarianceSpec | None = None,
                              n_quad: int = 512, n_terms: int | None = None,
                              rate: float = 5.0, height_rate: float = 5.0) -> SampledCoefficient:
    rng = check_rng(random_state)
    spec = gauss_spec or CovarianceSpec(nu=math.inf, variance=0.5, correlation_length=0.1)
    part = sample_partition(rate, rng, spec.domain)
    heights = rng.poisson(height_rate, size=part.count + 3).astype(float) + 1.0
    gauss = kl_sample(gaussian_basis(spec, n_quad, n_terms), rng)
    return SampledCoefficient(_zero, np.exp, gauss, JumpField(part, heights), spec.domain,
                              "poisson_sqexp")


def preset_inclusions(random_state=None, domain=(0.0, 1.0), rate: float = 10.0,
                      size_range=(1e-5, 1e-3), height_rate: float = 30.0,
                      background: float = 1.0) -> SampledCoefficient:
    """Background value with small random inclusions of Poisson or inverse-Poisson height."""
    rng = check_rng(random_state)
    left, right = check_domain(domain)
    n_incl = int(rng.poisson(rate)) + 1
    centers = rng.uniform(left, right, size=n_incl)
    sizes = rng.uniform(size_range[0], size_range[1], size=n_incl)
    heights = np.empty(n_incl)
    for i in range(n_incl):
        k = rng.integers(0, 2)
        xi = _positive_poisson(rng, height_rate)
        heights[i] = float(xi) if k == 0 else 1.0 / xi
    lo = np.clip(centers - sizes / 2, left, right)
    hi = np.clip(centers + sizes / 2, left, right)

    edges = np.unique(np.concatenate(([left, right], lo, hi)))
    edges = edges[np.concatenate(([True], np.diff(edges) > MIN_GAP))]
    edges[-1] = right
    mids = 0.5 * (edges[:-1] + edges[1:])
    seg = np.full(mids.size, background)
    for a, b, h in zip(lo, hi, heights):  # later inclusions overwrite earlier ones
        seg[(mids > a) & (mids < b)] = h
    # keep only edges where the value really changes
    change = seg[1:] != seg[:-1]
    pts = edges[1:-1][change]
    keep_heights = np.concatenate(([seg[0]], seg[1:][change]))
    jumps = JumpField.from_interior(pts, keep_heights, (left, right))
    return SampledCoefficient(_zero, np.exp, None, jumps, (left, right), "inclusions")


def jump_area(delta: float) -> tuple[float, float]:
    center = 1.0 - math.pi / 10.0
    return center - delta / 2.0, center + delta / 2.0


def preset_up_jump(delta: float) -> SampledCoefficient:
    a, b = jump_area(delta)
    jumps = JumpField.from_interior([a, b], [0.5, 1.5 / delta, 0.5])
    return SampledCoefficient(jumps=jumps, name="up_jump")


def preset_down_jump(delta: float) -> SampledCoefficient:
    a, b = jump_area(delta)
    jumps = JumpField.from_interior([a, b], [1.5, delta, 1.5])
    return SampledCoefficient(jumps=jumps, name="down_jump")


def preset_alternating_fixed(n_jumps: int, random_state=None) -> SampledCoefficient:
    """``n_jumps`` uniform jump positions; heights 1/2 on odd and 3/2 on even cells."""
    rng = check_rng(random_state)
    part = sample_partition(1.0, rng, n_breaks=n_jumps)
    idx = np.arange(part.count + 3)
    heights = np.where(idx % 2 == 1, 0.5, 1.5)
    return SampledCoefficient(jumps=JumpField(part, heights), name="alternating_fixed")


def preset_two_level(outer: float, inner: float, width: float) -> SampledCoefficient:
    """``inner`` on a band of the given width centred at pi/5, ``outer`` elsewhere."""
    c = math.pi / 5.0
    jumps = JumpField.from_interior([c - width / 2, c + width / 2], [outer, inner, outer])
    return SampledCoefficient(jumps=jumps, name="two_level")


def preset_lognormal(random_state=None, gauss_spec: CovarianceSpec | None = None,
                     n_quad: int = 512, n_terms: int | None = None) -> SampledCoefficient:
    """``a = exp(W)`` without jumps."""
    rng = check_rng(random_state)
    spec = gauss_spec or CovarianceSpec(nu=math.inf, variance=0.1, correlation_length=0.1)
    gauss = kl_sample(gaussian_basis(spec, n_quad, n_terms), rng)
    return SampledCoefficient(_zero, np.exp, gauss, None, spec.domain, "lognormal")


def preset_constant(value: float = 1.0) -> SampledCoefficient:
    jumps = JumpField.from_interior([], [value])
    return SampledCoefficient(jumps=jumps, name="constant")


def make_preset(name: str, random_state=None, **params) -> SampledCoefficient:
    """Build a coefficient realization from a preset id and its parameters.

    Gaussian presets accept ``nu``, ``variance``, ``correlation_length``,
    ``n_quad`` and ``n_terms``.
    """
    if name not in PRESETS:
        raise ValueError(f"unknown coefficient preset {name!r}; choose from {PRESETS}")
    if name in ("alternating_exponential", "poisson_sqexp", "lognormal"):
        gauss_keys = ("nu", "variance", "correlation_length")
        gparams = {k: params.pop(k) for k in gauss_keys if k in params}
        spec = None
        if gparams:
            defaults = {
                "alternating_exponential": dict(nu=0.5, variance=0.5, correlation_length=0.1),
                "poisson_sqexp": dict(nu=math.inf, variance=0.5, correlation_length=0.1),
                "lognormal": dict(nu=math.inf, variance=0.1, correlation_length=0.1),
            }[name]
            spec = CovarianceSpec(**{**defaults, **gparams})
        builder = {
            "alternating_exponential": preset_alternating_exponential,
            "poisson_sqexp": preset_poisson_squaredexp,
            "lognormal": preset_lognormal,
        }[name]
        return builder(random_state, gauss_spec=spec, **params)
    if name == "inclusions":
        return preset_inclusions(random_state, **params)
    if name == "alternating_fixed":
        return preset_alternating_fixed(int(params.pop("n_jumps", 4)), random_state, **params)
    if name == "up_jump":
        return preset_up_jump(float(params.get("delta", 2.0**-4)))
    if name == "down_jump":
        return preset_down_jump(float(params.get("delta", 2.0**-4)))
    if name == "two_level":
        return preset_two_level(float(params.get("outer", 0.5)), float(params.get("inner", 1.5)),
                                float(params.get("width", 0.1)))
    return preset_constant(float(params.get("value", 1.0)))
