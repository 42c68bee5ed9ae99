"""Equidistant, jump-adapted and wave-cell meshes, and the time grid."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from jumpflux._validation import check_domain

#: uniform interfaces closer than this fraction of the uniform step to a jump are dropped
NEAR_DUPLICATE = 0.1
#: keeps the wave cell strictly below twice the minimal step
WAVE_CELL_MARGIN = 1e-9


@dataclass(frozen=True, eq=False)
class Mesh:
    """Cell interfaces of a 1D finite volume mesh.

    ``flagged`` is a boolean mask over ``interfaces`` marking the interfaces
    that carry a coefficient discontinuity.
    """

    interfaces: np.ndarray
    flagged: np.ndarray | None = None
    cell_sizes: np.ndarray = field(init=False)
    centers: np.ndarray = field(init=False)

    def __post_init__(self):
        x = np.asarray(self.interfaces, dtype=float)
        if x.ndim != 1 or x.size < 2:
            raise ValueError("a mesh needs at least two interfaces")
        dx = np.diff(x)
        if np.any(dx <= 0.0):
            raise ValueError("mesh interfaces must be strictly increasing")
        flags = np.zeros(x.size, bool) if self.flagged is None else np.asarray(self.flagged, bool)
        if flags.shape != x.shape:
            raise ValueError("flag mask must match the interfaces")
        for name, value in (("interfaces", x), ("flagged", flags), ("cell_sizes", dx),
                            ("centers", 0.5 * (x[:-1] + x[1:]))):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_cells(self) -> int:
        return self.cell_sizes.size

    @property
    def min_h(self) -> float:
        return float(self.cell_sizes.min())

    @property
    def max_h(self) -> float:
        return float(self.cell_sizes.max())

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.interfaces[0]), float(self.interfaces[-1])

    @property
    def discontinuity_interfaces(self) -> np.ndarray:
        return np.flatnonzero(self.flagged)

    def wave_cells(self) -> np.ndarray:
        """Indices of the cells adjacent to a flagged interface."""
        k = self.discontinuity_interfaces
        cells = np.concatenate((k - 1, k))
        return np.unique(cells[(cells >= 0) & (cells < self.n_cells)])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["index", "x", "discontinuity"])
            for i, (x, f) in enumerate(zip(self.interfaces, self.flagged)):
                writer.writerow([i, repr(float(x)), int(f)])


def build_equidistant(n_cells: int, domain=(0.0, 1.0)) -> Mesh:
    n_cells = int(n_cells)
    if n_cells < 1:
        raise ValueError("n_cells must be a positive integer")
    left, right = check_domain(domain)
    return Mesh(np.linspace(left, right, n_cells + 1))


def build_jump_adapted(n_cells: int, discontinuities, domain=(0.0, 1.0)) -> Mesh:
    """Equidistant mesh with every discontinuity inserted as a flagged interface.

    Uniform interfaces within ``0.1 * h`` of a discontinuity are removed so
    jumps landing next to a grid point do not create tiny cells.
    """
    base = build_equidistant(n_cells, domain)
    left, right = base.domain
    jumps = np.asarray(discontinuities, dtype=float).ravel()
    if jumps.size == 0:
        return base
    if np.any(jumps <= left) or np.any(jumps >= right):
        raise ValueError("discontinuities must lie strictly inside the domain")
    jumps = np.sort(jumps)
    if np.any(np.diff(jumps) <= 0.0):
        raise ValueError("duplicate discontinuity locations")
    h = (right - left) / n_cells
    inner = base.interfaces[1:-1]
    pos = np.searchsorted(jumps, inner)
    dist = np.full(inner.size, np.inf)
    has_right = pos < jumps.size
    dist[has_right] = jumps[pos[has_right]] - inner[has_right]
    has_left = pos > 0
    dist[has_left] = np.minimum(dist[has_left], inner[has_left] - jumps[pos[has_left] - 1])
    kept = inner[dist >= NEAR_DUPLICATE * h]
    x = np.concatenate(([left], kept, jumps, [right]))
    flags = np.concatenate((np.zeros(kept.size + 1, bool), np.ones(jumps.size, bool), [False]))
    order = np.argsort(x, kind="stable")
    return Mesh(x[order], flags[order])


def _wave_piece(length: float, min_h: float) -> float:
    return min(max(0.5 * length, min_h), 2.0 * min_h * (1.0 - WAVE_CELL_MARGIN))


def _split_point(anchor: float, other: float, min_h: float) -> float:
    """Interface between ``anchor`` (the discontinuity) and ``other``.

    Leaves a piece in ``[min_h, 2 min_h)`` next to ``anchor`` and at least
    ``min_h`` on the other side, robust to rounding.
    """
    direction = 1.0 if other > anchor else -1.0
    length = abs(other - anchor)
    p = anchor + direction * _wave_piece(length, min_h)
    toward_other = np.inf * direction
    toward_anchor = -toward_other
    while abs(p - anchor) < min_h:
        p = np.nextafter(p, toward_other)
    while abs(p - anchor) >= 2.0 * min_h:
        p = np.nextafter(p, toward_anchor)
    while abs(other - p) < min_h:  # only reachable through rounding
        p = np.nextafter(p, toward_anchor)
    return float(p)


def refine_wave_cells(mesh: Mesh) -> Mesh:
    """Shrink every cell adjacent to a flagged interface into ``[min_h, 2 min_h)``.

    ``min_h`` is that of the input mesh and is not reduced.  A split
    remainder is not split again unless it is adjacent to a second flagged
    interface.
    """
    if not mesh.flagged.any():
        return mesh
    min_h = mesh.min_h
    x, flags = mesh.interfaces, mesh.flagged
    new_points: list[float] = []
    for i in range(mesh.n_cells):
        lo, hi = float(x[i]), float(x[i + 1])
        left_flag, right_flag = bool(flags[i]), bool(flags[i + 1])
        if hi - lo < 2.0 * min_h or not (left_flag or right_flag):
            continue
        if left_flag:
            p = _split_point(lo, hi, min_h)
            new_points.append(p)
            if right_flag and hi - p >= 2.0 * min_h:
                new_points.append(_split_point(hi, p, min_h))
        else:
            new_points.append(_split_point(hi, lo, min_h))
    if not new_points:
        return mesh
    pts = np.asarray(new_points)
    allx = np.concatenate((x, pts))
    allf = np.concatenate((flags, np.zeros(pts.size, bool)))
    order = np.argsort(allx, kind="stable")
    return Mesh(allx[order], allf[order])


def build_mesh(strategy: str, n_cells: int, discontinuities=(), domain=(0.0, 1.0)) -> Mesh:
    """Dispatch on ``equidistant``, ``jump_adapted`` or ``wave_cell``."""
    if strategy == "equidistant":
        return build_equidistant(n_cells, domain)
    if strategy == "jump_adapted":
        return build_jump_adapted(n_cells, discontinuities, domain)
    if strategy == "wave_cell":
        return refine_wave_cells(build_jump_adapted(n_cells, discontinuities, domain))
    raise ValueError(f"unknown meshing strategy {strategy!r}")


def build_time_grid(t_end: float, dt: float) -> np.ndarray:
    """Uniform times from 0 with the last step clamped onto ``t_end``."""
    if t_end <= 0 or dt <= 0:
        raise ValueError("t_end and dt must be positive")
    n_full = int(np.floor(t_end / dt + 1e-12))
    times = dt * np.arange(n_full + 1)
    times = times[times < t_end * (1.0 - 1e-12)]
    return np.append(times, t_end)
