"""Small input checks shared by the public functions."""

from __future__ import annotations

import numbers

import numpy as np


def check_rng(random_state=None) -> np.random.Generator:
    """Turn ``None``, an int seed, a SeedSequence or a Generator into a Generator."""
    if isinstance(random_state, np.random.Generator):
        return random_state
    if random_state is None or isinstance(random_state, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(random_state)
    raise TypeError(f"cannot build a random generator from {random_state!r}")


def sample_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent stream for sample ``index`` (counter-based: master_seed + index)."""
    return np.random.default_rng(np.random.SeedSequence(int(master_seed) + int(index)))


def check_positive(value, name: str, allow_inf: bool = False) -> float:
    value = float(value)
    if np.isnan(value) or value <= 0.0 or (np.isinf(value) and not allow_inf):
        raise ValueError(f"{name} must be positive{' or +inf' if allow_inf else ''} (got {value})")
    return value


def check_finite_array(x, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_domain(domain) -> tuple[float, float]:
    try:
        left, right = (float(v) for v in domain)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"domain must be a pair (x_l, x_r), got {domain!r}") from exc
    if not (np.isfinite(left) and np.isfinite(right)) or right <= left:
        raise ValueError(f"domain must have positive length, got {domain!r}")
    return left, right
